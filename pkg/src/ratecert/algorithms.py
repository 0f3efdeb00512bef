"""Catalog of first-order methods realized as parameter-varying plants.

Every factory takes a :class:`SectorSchedule` giving the strong-convexity and
smoothness moduli as functions of the scheduling parameter, and returns the
method's exact state-space realization with per-step re-tuned coefficients.
Gradient queries are feedback channels (counted by ``p``); set-normal queries
of constrained methods are additional channels (counted by ``q``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lpv import ONE, BasisFn, LpvSystem, MatrixFn, coord

__all__ = [
    "SectorSchedule",
    "make_gd",
    "make_multistep_gd",
    "make_nesterov",
    "make_triple_momentum",
    "make_accelerated_ogd",
    "make_algorithm",
    "ALGORITHM_IDS",
]


# ---------------------------------------------------------------------------
# Sector schedule
# ---------------------------------------------------------------------------

def _scalar_closure(mf: MatrixFn):
    """Vectorized scalar evaluation of a 1x1 MatrixFn."""
    parts = [(b.fn, float(F[0, 0])) for b, F in zip(mf.basis, mf.coeffs)]

    def fn(th: np.ndarray) -> np.ndarray:
        out = np.zeros(th.shape[:-1])
        for bfn, c in parts:
            out = out + c * bfn(th)
        return out

    return fn


@dataclass(frozen=True)
class SectorSchedule:
    """Moduli m(theta) <= L(theta) of the admissible gradient sector."""

    m: MatrixFn
    L: MatrixFn

    def __post_init__(self) -> None:
        if self.m.shape != (1, 1) or self.L.shape != (1, 1):
            raise ValueError("sector moduli must be scalar-valued MatrixFns")

    @classmethod
    def affine_in_theta(cls, m: float = 1.0) -> "SectorSchedule":
        """Constant m, smoothness equal to the scheduling parameter."""
        return cls(
            m=MatrixFn.constant([[m]]),
            L=MatrixFn([coord(0)], [np.ones((1, 1))]),
        )

    @classmethod
    def constants(cls, m: float, L: float) -> "SectorSchedule":
        return cls(MatrixFn.constant([[m]]), MatrixFn.constant([[L]]))

    def m_at(self, theta) -> float:
        return float(self.m(theta)[0, 0])

    def L_at(self, theta) -> float:
        return float(self.L(theta)[0, 0])

    def kappa_at(self, theta) -> float:
        return self.L_at(theta) / self.m_at(theta)

    def m_fn(self):
        return _scalar_closure(self.m)

    def L_fn(self):
        return _scalar_closure(self.L)

    def validate_at(self, theta) -> None:
        m, L = self.m_at(theta), self.L_at(theta)
        if not (0 < m <= L):
            raise ValueError(f"need 0 < m <= L at theta={theta}: m={m}, L={L}")


# ---------------------------------------------------------------------------
# Step-size rules
# ---------------------------------------------------------------------------

def _step_basis(sched: SectorSchedule, step_rule) -> BasisFn:
    """Scalar step-size alpha(theta) as a named basis function."""
    m_fn, L_fn = sched.m_fn(), sched.L_fn()
    if step_rule == "two_over_m_plus_L":
        return BasisFn("2/(m+L)", lambda th: 2.0 / (m_fn(th) + L_fn(th)))
    if step_rule == "one_over_L":
        return BasisFn("1/L", lambda th: 1.0 / L_fn(th))
    if isinstance(step_rule, (int, float)) and step_rule > 0:
        c = float(step_rule)
        return BasisFn(f"{c}", lambda th: np.full(th.shape[:-1], c))
    raise ValueError(f"unknown step rule {step_rule!r}")


# ---------------------------------------------------------------------------
# Factories
# ---------------------------------------------------------------------------

def make_gd(sched: SectorSchedule, step_rule="two_over_m_plus_L") -> LpvSystem:
    """Gradient descent ``x_{k+1} = x_k - alpha(theta_k) grad f_k(x_k)``."""
    a = _step_basis(sched, step_rule)
    return LpvSystem(
        A=MatrixFn.constant([[1.0]]),
        B=MatrixFn([a], [[[-1.0]]]),
        C=MatrixFn.constant([[1.0]]),
        D=MatrixFn.constant([[0.0]]),
        n_xi=1,
        p=1,
        q=0,
    )


def make_multistep_gd(
    sched: SectorSchedule, m_steps: int, step_rule="two_over_m_plus_L"
) -> LpvSystem:
    """``m_steps`` inner gradient steps per round on the same objective.

    All inner queries are separate gradient channels, so the realization has
    p = m_steps with a strictly lower-triangular direct feedthrough chaining
    the inner points.
    """
    if m_steps < 1:
        raise ValueError("m_steps must be >= 1")
    K = m_steps
    a = _step_basis(sched, step_rule)
    return LpvSystem(
        A=MatrixFn.constant([[1.0]]),
        B=MatrixFn([a], [-np.ones((1, K))]),
        C=MatrixFn.constant(np.ones((K, 1))),
        D=MatrixFn([a], [np.tril(-np.ones((K, K)), k=-1)]),
        n_xi=1,
        p=K,
        q=0,
    )


def make_nesterov(sched: SectorSchedule) -> LpvSystem:
    """Accelerated gradient method with per-step re-tuned momentum."""
    m_fn, L_fn = sched.m_fn(), sched.L_fn()

    def beta_val(th):
        rk = np.sqrt(L_fn(th) / m_fn(th))
        return (rk - 1.0) / (rk + 1.0)

    beta = BasisFn("(sqrt(k)-1)/(sqrt(k)+1)", beta_val)
    alpha = BasisFn("1/L", lambda th: 1.0 / L_fn(th))
    return LpvSystem(
        A=MatrixFn([ONE, beta], [np.array([[1.0, 0.0], [1.0, 0.0]]),
                                 np.array([[1.0, -1.0], [0.0, 0.0]])]),
        B=MatrixFn([alpha], [np.array([[-1.0], [0.0]])]),
        C=MatrixFn([ONE, beta], [np.array([[1.0, 0.0]]),
                                 np.array([[1.0, -1.0]])]),
        D=MatrixFn.constant([[0.0]]),
        n_xi=2,
        p=1,
        q=0,
    )


def make_triple_momentum(sched: SectorSchedule) -> LpvSystem:
    """Triple-momentum method with per-step re-tuned coefficients."""
    m_fn, L_fn = sched.m_fn(), sched.L_fn()

    def r_val(th):
        return 1.0 - 1.0 / np.sqrt(L_fn(th) / m_fn(th))

    alpha = BasisFn("(1+r)/L", lambda th: (1.0 + r_val(th)) / L_fn(th))
    beta = BasisFn("r^2/(2-r)", lambda th: r_val(th) ** 2 / (2.0 - r_val(th)))
    gamma = BasisFn(
        "r^2/((1+r)(2-r))",
        lambda th: r_val(th) ** 2 / ((1.0 + r_val(th)) * (2.0 - r_val(th))),
    )
    return LpvSystem(
        A=MatrixFn([ONE, beta], [np.array([[1.0, 0.0], [1.0, 0.0]]),
                                 np.array([[1.0, -1.0], [0.0, 0.0]])]),
        B=MatrixFn([alpha], [np.array([[-1.0], [0.0]])]),
        C=MatrixFn([ONE, gamma], [np.array([[1.0, 0.0]]),
                                  np.array([[1.0, -1.0]])]),
        D=MatrixFn.constant([[0.0]]),
        n_xi=2,
        p=1,
        q=0,
    )


def make_accelerated_ogd(
    sched: SectorSchedule, tau: float, alpha: float, gamma: float
) -> LpvSystem:
    """Accelerated projected online gradient method (one gradient channel,
    two set-normal channels with resolvable diagonal feedthrough)."""
    if not (0 < tau <= 1) or alpha <= 0 or gamma <= 0:
        raise ValueError("need 0 < tau <= 1 and alpha, gamma > 0")
    A = np.array([[tau, 1.0 - tau], [0.0, 1.0]])
    B = np.array([[-gamma, -gamma, 0.0], [-alpha, 0.0, -alpha]])
    C = np.array([[tau, 1.0 - tau], [tau, 1.0 - tau], [0.0, 1.0]])
    D = np.array(
        [[0.0, 0.0, 0.0], [-gamma, -gamma, 0.0], [-alpha, 0.0, -alpha]]
    )
    return LpvSystem(
        A=MatrixFn.constant(A),
        B=MatrixFn.constant(B),
        C=MatrixFn.constant(C),
        D=MatrixFn.constant(D),
        n_xi=2,
        p=1,
        q=2,
    )


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

ALGORITHM_IDS = ("gd", "gd-m<k>", "nesterov", "tmm", "aogd")


def make_algorithm(algo_id: str, sched: SectorSchedule, L_ref: float | None = None) -> LpvSystem:
    """Build a catalog algorithm by id: ``gd``, ``gd-m<k>`` (k inner steps),
    ``nesterov``, ``tmm``, ``aogd`` (requires ``L_ref`` for its fixed tuning)."""
    if algo_id == "gd":
        return make_gd(sched)
    if algo_id.startswith("gd-m"):
        try:
            k = int(algo_id[4:])
        except ValueError:
            raise ValueError(f"unknown algorithm id {algo_id!r}") from None
        return make_multistep_gd(sched, k)
    if algo_id == "nesterov":
        return make_nesterov(sched)
    if algo_id == "tmm":
        return make_triple_momentum(sched)
    if algo_id == "aogd":
        if L_ref is None or L_ref <= 0:
            raise ValueError("aogd needs a positive L_ref for its fixed tuning")
        alpha = gamma = 1.0 / L_ref
        return make_accelerated_ogd(sched, tau=alpha * gamma, alpha=alpha, gamma=gamma)
    raise ValueError(f"unknown algorithm id {algo_id!r}")
