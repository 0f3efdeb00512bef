"""Synthetic time-varying problems, trajectory simulation, and empirical
validation of certified bounds.

The generator produces strongly convex quadratics whose curvature follows the
scheduled sector bounds along an admissible parameter path and whose minimizer
drifts sinusoidally.  The simulator runs any catalog system against such a
problem, resolving gradient channels by evaluation and cone channels by
projection, and records everything the certified bounds consume: per-step
optimizer increments, gradient-map increments, and function-gap terms.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .algorithms import SectorSchedule
from .certify import Certificate
from .lpv import LpvSystem, ParamDomain, build_consistent_grid, check_fixed_point

__all__ = [
    "BoxSet",
    "TvProblem",
    "make_varying_quadratic",
    "Trajectory",
    "simulate",
    "simulate_batch",
    "BatchTrajectory",
    "BoundCheck",
    "check_bound_pointwise",
    "check_bound_variational",
    "asymptotic_radius",
    "trajectory_to_csv",
    "TRAJECTORY_CSV_HEADER",
]

TRAJECTORY_CSV_HEADER = "k,theta,x,xstar,err,err_xi,bound_rhs"


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box; the only constraint set the simulator supports."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if np.any(self.lo > self.hi):
            raise ValueError("empty box")

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)


@dataclass(frozen=True)
class TvProblem:
    """Sequence of quadratics f_k(x) = 0.5 (x - z_k)' H_k (x - z_k) with
    diagonal H_k whose spectrum spans [m(theta_k), L(theta_k)], optionally
    constrained to a box."""

    sched: SectorSchedule
    domain: ParamDomain
    d: int
    thetas: np.ndarray        # (N+1,)
    z: np.ndarray             # (N+1, d)
    box: BoxSet | None = None

    @property
    def horizon(self) -> int:
        return len(self.thetas) - 1

    def H_diag(self, k: int) -> np.ndarray:
        th = np.array([self.thetas[k]])
        m = self.sched.m_at(th)
        L = self.sched.L_at(th)
        if self.d == 1:
            return np.array([L])
        return m + (L - m) / (self.d - 1) * np.arange(self.d)

    def grad(self, k: int, x: np.ndarray) -> np.ndarray:
        return self.H_diag(k) * (x - self.z[k])

    def value(self, k: int, x: np.ndarray) -> float:
        dx = x - self.z[k]
        return 0.5 * float(np.dot(dx, self.H_diag(k) * dx))

    def xstar(self, k: int) -> np.ndarray:
        if self.box is None:
            return self.z[k]
        return self.box.project(self.z[k])

    def fstar(self, k: int) -> float:
        if self.box is None:
            return 0.0
        return self.value(k, self.xstar(k))

    def fhat(self, k: int, x: np.ndarray) -> float:
        return self.value(k, x) - self.fstar(k)


def make_varying_quadratic(
    domain: ParamDomain,
    sched: SectorSchedule,
    d: int = 1,
    horizon: int = 500,
    seed: int = 0,
    theta_path_kind: str = "sinusoid",
    z_amplitude: float = 1.0,
    box: BoxSet | None = None,
) -> TvProblem:
    """Generate an admissible problem instance.

    The parameter path stays inside the domain box and its per-step increment
    stays inside the admissible increment interval by construction:

    * ``sinusoid``: theta oscillates about the domain midpoint with the
      amplitude capped so each step obeys the increment bound;
    * ``random_walk``: uniform admissible increments, re-clipped per step;
    * ``constant``: theta pinned at the domain's upper endpoint.

    Minimizer coordinates follow sinusoids with independent random phases.
    """
    if domain.n_theta != 1:
        raise ValueError("generator supports scalar parameters only")
    rng = np.random.default_rng(seed)
    lo, hi = float(domain.lo[0]), float(domain.hi[0])
    dlo, dhi = float(domain.delta_lo[0]), float(domain.delta_hi[0])
    nu = min(-dlo, dhi) if (dlo <= 0.0 <= dhi) else 0.0
    N = horizon

    if theta_path_kind == "constant":
        thetas = np.full(N + 1, hi)
    elif theta_path_kind == "sinusoid":
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        omega = 2.0 * math.pi / 97.0
        amp = min(half, nu / omega) if omega > 0 else half
        phase = rng.uniform(0.0, 2.0 * math.pi)
        k = np.arange(N + 1)
        thetas = mid + amp * np.sin(omega * k + phase)
    elif theta_path_kind == "random_walk":
        thetas = np.empty(N + 1)
        th = rng.uniform(lo, hi)
        thetas[0] = th
        for k in range(N):
            a = max(dlo, lo - th)
            b = min(dhi, hi - th)
            th = th + rng.uniform(a, b) if b > a else th + 0.0
            th = min(max(th, lo), hi)
            thetas[k + 1] = th
    else:
        raise ValueError(f"unknown theta_path_kind {theta_path_kind!r}")

    omega_z = 2.0 * math.pi / 61.0
    phases = rng.uniform(0.0, 2.0 * math.pi, size=d)
    k = np.arange(N + 1)[:, None]
    z = z_amplitude * np.sin(omega_z * k + phases[None, :])
    return TvProblem(sched, domain, d, thetas, z, box)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Everything recorded along one run.

    Shapes (N = horizon, d = problem dimension, w = channel count):
    ``xi`` (N+1, n_xi*d), ``x``/``xstar`` (N+1, d), ``y`` (N, p, d) gradient
    evaluation points, ``u`` (N, w, d), ``dxstar`` (N, d), ``ddelta``
    (N, p, d), ``fhat_same[k, i]`` = fhat_k(y_k^i), ``fhat_next[k, i]`` =
    fhat_{k+1}(y_k^i).
    """

    thetas: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    xstar: np.ndarray
    xistar: np.ndarray
    err: np.ndarray
    err_xi: np.ndarray
    y: np.ndarray
    u: np.ndarray
    dxstar: np.ndarray
    dxistar_norm: np.ndarray
    ddelta: np.ndarray
    fhat_same: np.ndarray
    fhat_next: np.ndarray
    U: np.ndarray
    sys: LpvSystem = None
    prob: TvProblem = None


def _fixed_point_gain(sys: LpvSystem, domain: ParamDomain) -> np.ndarray:
    grid = build_consistent_grid(domain, n_nodes=3, n_delta=2)
    rep = check_fixed_point(sys, grid)
    if not rep.ok:
        raise ValueError("system has no uniform fixed point on this domain")
    return rep.U


def simulate(
    sys: LpvSystem,
    prob: TvProblem,
    xi0: np.ndarray | None = None,
    n_steps: int | None = None,
) -> Trajectory:
    """Run the closed loop for ``n_steps`` (default: the problem horizon).

    Gradient channels are resolved in row order (their feedthrough is
    strictly lower triangular); cone channels are resolved by projecting onto
    the box, which requires a negative diagonal feedthrough entry.
    """
    d = prob.d
    N = prob.horizon if n_steps is None else int(n_steps)
    if N > prob.horizon:
        raise ValueError("n_steps exceeds the problem horizon")
    n = sys.n_xi * d
    p, q, w = sys.p, sys.q, sys.n_channels
    if q > 0 and prob.box is None:
        raise ValueError("cone channels need a box-constrained problem")

    U = _fixed_point_gain(sys, prob.domain)
    Id = np.eye(d)

    xi = np.zeros((N + 1, n))
    xi[0] = np.zeros(n) if xi0 is None else np.asarray(xi0, dtype=float).ravel()
    xstar = np.zeros((N + 1, d))
    xistar = np.zeros((N + 1, n))
    y = np.zeros((N, p, d))
    u = np.zeros((N, w, d))
    dxstar = np.zeros((N, d))
    ddelta = np.zeros((N, p, d))
    fhat_same = np.zeros((N, p))
    fhat_next = np.zeros((N, p))

    for k in range(N + 1):
        xstar[k] = prob.xstar(k)
        xistar[k] = np.kron(U[:, 0], xstar[k])

    for k in range(N):
        th = np.array([prob.thetas[k]])
        A = np.kron(sys.A(th), Id)
        B = np.kron(sys.B(th), Id)
        C = sys.C(th)
        D = sys.D(th)
        uk = np.zeros((w, d))
        for i in range(w):
            c_pre = np.kron(C[i], Id) @ xi[k]
            for j in range(i):
                c_pre = c_pre + D[i, j] * uk[j]
            if i < p:
                y[k, i] = c_pre
                uk[i] = prob.grad(k, c_pre)
            else:
                if D[i, i] >= 0.0:
                    raise ValueError(
                        "cone channel needs a negative diagonal feedthrough"
                    )
                s = prob.box.project(c_pre)
                uk[i] = (s - c_pre) / D[i, i]
        u[k] = uk
        xi[k + 1] = A @ xi[k] + B @ uk.ravel()

        dxstar[k] = xstar[k] - xstar[k + 1]
        for i in range(p):
            g_now = prob.grad(k, y[k, i])
            g_next = prob.grad(k + 1, y[k, i])
            ddelta[k, i] = g_now - g_next
            fhat_same[k, i] = prob.fhat(k, y[k, i])
            fhat_next[k, i] = prob.fhat(k + 1, y[k, i])

    x = xi[:, :d].copy()
    err = np.linalg.norm(x - xstar, axis=1)
    err_xi = np.linalg.norm(xi - xistar, axis=1)
    dxistar = (xistar[:-1] - xistar[1:])
    dxistar_norm = np.linalg.norm(dxistar, axis=1)
    return Trajectory(
        thetas=prob.thetas[: N + 1].copy(),
        xi=xi,
        x=x,
        xstar=xstar,
        xistar=xistar,
        err=err,
        err_xi=err_xi,
        y=y,
        u=u,
        dxstar=dxstar,
        dxistar_norm=dxistar_norm,
        ddelta=ddelta,
        fhat_same=fhat_same,
        fhat_next=fhat_next,
        U=U,
        sys=sys,
        prob=prob,
    )


# ---------------------------------------------------------------------------
# Batched simulation (gradient channels only)
# ---------------------------------------------------------------------------

@dataclass
class BatchTrajectory:
    """Vectorized run over B problems sharing one schedule and horizon.
    Arrays carry a leading batch axis; see :class:`Trajectory` for layouts."""

    thetas: np.ndarray        # (B, N+1)
    xi: np.ndarray            # (B, N+1, n)
    err_xi: np.ndarray        # (B, N+1)
    err: np.ndarray           # (B, N+1)
    dxistar_norm: np.ndarray  # (B, N)
    ddelta: np.ndarray        # (B, N, p, d)
    fhat_same: np.ndarray     # (B, N, p)
    fhat_next: np.ndarray     # (B, N, p)
    U: np.ndarray


def simulate_batch(
    sys: LpvSystem, probs: list[TvProblem], xi0: np.ndarray | None = None
) -> BatchTrajectory:
    """Simulate many problems at once.  Restricted to gradient-only systems;
    produces bitwise the same numbers as per-problem :func:`simulate`."""
    if sys.q != 0:
        raise ValueError("batched simulation supports gradient channels only")
    B = len(probs)
    d = probs[0].d
    N = probs[0].horizon
    for pr in probs:
        if pr.horizon != N or pr.d != d:
            raise ValueError("batch members must share horizon and dimension")
        if pr.sched is not probs[0].sched or pr.box is not None:
            raise ValueError(
                "batch members must share a schedule and be unconstrained"
            )
    n = sys.n_xi * d
    p = sys.p
    U = _fixed_point_gain(sys, probs[0].domain)

    thetas = np.stack([pr.thetas for pr in probs])           # (B, N+1)
    z = np.stack([pr.z for pr in probs])                     # (B, N+1, d)
    m_path = probs[0].sched.m_fn()(thetas[..., None])        # (B, N+1)
    L_path = probs[0].sched.L_fn()(thetas[..., None])        # (B, N+1)
    if d == 1:
        Hd = L_path[..., None]                               # (B, N+1, 1)
    else:
        step = (L_path - m_path) / (d - 1)
        Hd = m_path[..., None] + step[..., None] * np.arange(d)

    xi = np.zeros((B, N + 1, n))
    if xi0 is not None:
        start = np.asarray(xi0, dtype=float)
        if start.size == n:
            # One shared initial state, same as passing it to each
            # per-problem run.
            xi[:, 0, :] = start.reshape(n)
        else:
            xi[:, 0, :] = start.reshape(B, n)
    y = np.zeros((B, N, p, d))
    ddelta = np.zeros((B, N, p, d))
    fhat_same = np.zeros((B, N, p))
    fhat_next = np.zeros((B, N, p))

    xstar = z.copy()
    fstar = np.zeros((B, N + 1))
    xistar = np.einsum("i,bkd->bkid", U[:, 0], xstar).reshape(B, N + 1, n)

    th_col = thetas[..., None]                                # (B, N+1, 1)
    A_all = sys.A.eval_batch(th_col.reshape(-1, 1)).reshape(B, N + 1, *sys.A.shape)
    B_all = sys.B.eval_batch(th_col.reshape(-1, 1)).reshape(B, N + 1, *sys.B.shape)
    C_all = sys.C.eval_batch(th_col.reshape(-1, 1)).reshape(B, N + 1, *sys.C.shape)
    D_all = sys.D.eval_batch(th_col.reshape(-1, 1)).reshape(B, N + 1, *sys.D.shape)

    def fval(Hk, zk, fsk, pts):
        dx = pts - zk
        return 0.5 * np.einsum("bd,bd->b", dx, Hk * dx) - fsk

    xs = xi.reshape(B, N + 1, sys.n_xi, d)
    for k in range(N):
        Hk = Hd[:, k]                                          # (B, d)
        uk = np.zeros((B, p, d))
        for i in range(p):
            c_pre = np.einsum("bj,bjd->bd", C_all[:, k, i, :], xs[:, k])
            for j in range(i):
                c_pre = c_pre + D_all[:, k, i, j, None] * uk[:, j]
            y[:, k, i] = c_pre
            uk[:, i] = Hk * (c_pre - z[:, k])
            ddelta[:, k, i] = uk[:, i] - Hd[:, k + 1] * (c_pre - z[:, k + 1])
            fhat_same[:, k, i] = fval(Hk, z[:, k], fstar[:, k], c_pre)
            fhat_next[:, k, i] = fval(
                Hd[:, k + 1], z[:, k + 1], fstar[:, k + 1], c_pre
            )
        nxt = np.einsum("bij,bjd->bid", A_all[:, k], xs[:, k]) + np.einsum(
            "bij,bjd->bid", B_all[:, k], uk
        )
        xs[:, k + 1] = nxt
    xi = xs.reshape(B, N + 1, n)

    err_xi = np.linalg.norm(xi - xistar, axis=2)
    err = np.linalg.norm(xi[:, :, :d] - xstar, axis=2)
    dxistar_norm = np.linalg.norm(xistar[:, :-1] - xistar[:, 1:], axis=2)
    return BatchTrajectory(
        thetas=thetas,
        xi=xi,
        err_xi=err_xi,
        err=err,
        dxistar_norm=dxistar_norm,
        ddelta=ddelta,
        fhat_same=fhat_same,
        fhat_next=fhat_next,
        U=U,
    )


# ---------------------------------------------------------------------------
# Bound checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundCheck:
    ok: bool
    max_ratio: float
    worst_k: int
    rhs: np.ndarray


def _require(cert: Certificate, theorem: str):
    if not cert.feasible:
        raise ValueError("bound check requires a feasible certificate")
    if cert.theorem != theorem:
        raise ValueError(f"certificate is not a {theorem} certificate")


def check_bound_pointwise(
    cert: Certificate, traj, rtol: float = 1e-6
) -> BoundCheck:
    """Verify ||xi_err(k)|| <= c rho^k ||xi_err(0)|| + c sum_{t<=k}
    rho^(k-t) ||optimizer increment at t-1|| at every recorded step.
    Accepts single or batched trajectories."""
    _require(cert, "pointwise")
    rho, c = cert.rho, cert.c
    e = traj.err_xi
    N = e.shape[-1] - 1
    rhs = np.zeros_like(e)
    rhs[..., 0] = c * e[..., 0]
    S = np.zeros(e.shape[:-1])
    for k in range(1, N + 1):
        S = rho * S + traj.dxistar_norm[..., k - 1]
        rhs[..., k] = c * rho ** k * e[..., 0] + c * S
    return _ratio_check(e, rhs, rtol)


def _gap(cert: Certificate, thetas: np.ndarray) -> np.ndarray:
    sched = cert.sector()
    th = np.asarray(thetas, dtype=float)[..., None]
    return sched.L_fn()(th) - sched.m_fn()(th)


def variational_rhs(cert: Certificate, traj) -> np.ndarray:
    """Squared-error envelope for the variational certificate, computed with
    O(1)-per-step recurrences.  Accepts single or batched trajectories."""
    rho2 = cert.rho ** 2
    lam = cert.lambda_p
    gx, gd = cert.gamma_xi, cert.gamma_delta
    c1, c2 = cert.c1, cert.c2
    gaps = _gap(cert, traj.thetas)
    e = traj.err_xi
    batched = e.ndim == 2
    N = e.shape[-1] - 1
    dd2 = np.sum(traj.ddelta ** 2, axis=(-2, -1))          # (..., N)
    dxi2 = traj.dxistar_norm ** 2
    # per-step G increments g_k = sum_i lam_i (gap_k fhat_next[k-1, i]
    #                                          - gap_{k-1} fhat_same[k-1, i])
    fn = traj.fhat_next @ lam                              # (..., N)
    fs = traj.fhat_same @ lam
    shape = e.shape[:-1] + (N + 1,)
    rhs = np.zeros(shape)
    rhs[..., 0] = c1 * e[..., 0] ** 2
    D = np.zeros(e.shape[:-1])
    G = np.zeros(e.shape[:-1])
    for k in range(1, N + 1):
        D = rho2 * D + gx * dxi2[..., k - 1] + gd * dd2[..., k - 1]
        if k >= 2:
            g_inc = (
                gaps[..., k - 1] * fn[..., k - 2]
                - gaps[..., k - 2] * fs[..., k - 2]
            )
            G = rho2 * (G + g_inc)
        rhs[..., k] = c1 * rho2 ** k * e[..., 0] ** 2 + c2 * D + c2 * G
    return rhs


def check_bound_variational(
    cert: Certificate, traj, rtol: float = 1e-6
) -> BoundCheck:
    """Verify the squared-error envelope of the variational certificate
    (geometric memory of the initial error, priced optimizer and gradient-map
    increments, and the discounted function-variation sum)."""
    _require(cert, "variational")
    rhs = variational_rhs(cert, traj)
    e2 = traj.err_xi ** 2
    return _ratio_check(e2, rhs, rtol)


def _ratio_check(lhs: np.ndarray, rhs: np.ndarray, rtol: float) -> BoundCheck:
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    ratio = np.where(rhs > 0.0, lhs / np.where(rhs > 0.0, rhs, 1.0), 0.0)
    dead = (rhs <= 0.0) & (lhs > 1e-12)
    mr = float(ratio.max()) if ratio.size else 0.0
    worst = int(np.unravel_index(np.argmax(ratio), ratio.shape)[-1])
    ok = (mr <= 1.0 + rtol) and not bool(dead.any())
    return BoundCheck(ok, mr, worst, rhs)


def asymptotic_radius(
    cert: Certificate,
    sigma_xi: float,
    sigma_delta: float = 0.0,
    sigma_f: float = 0.0,
    sigma_fstar: float = 0.0,
) -> float:
    """Steady-state error radius implied by a certificate under uniform
    bounds on the per-step variation magnitudes.

    Pointwise: c * sigma_xi / (1 - rho), a bound on ||xi_err||.
    Variational: sqrt(c2 (gamma_xi s_xi^2 + p gamma_delta s_delta^2
    + sum_i gamma_f_i (s_f + s_f*)) / (1 - rho^2)).
    """
    if not cert.feasible:
        raise ValueError("radius requires a feasible certificate")
    if cert.rho >= 1.0:
        return float("inf")
    if cert.theorem == "pointwise":
        return cert.c * sigma_xi / (1.0 - cert.rho)
    p = len(cert.lambda_p)
    total = (
        cert.gamma_xi * sigma_xi ** 2
        + p * cert.gamma_delta * sigma_delta ** 2
        + float(np.sum(cert.gamma_f)) * (sigma_f + sigma_fstar)
    )
    return math.sqrt(cert.c2 * total / (1.0 - cert.rho ** 2))


# ---------------------------------------------------------------------------
# Trajectory export
# ---------------------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory, cert: Certificate | None = None) -> str:
    """CSV with one row per step.  ``x``/``xstar`` report the first
    coordinate; ``bound_rhs`` is the certified envelope for ``err_xi`` (blank
    without a certificate), on the same scale as ``err_xi``."""
    rhs = None
    if cert is not None and cert.feasible:
        if cert.theorem == "pointwise":
            rhs = check_bound_pointwise(cert, traj).rhs
        else:
            rhs = np.sqrt(np.maximum(variational_rhs(cert, traj), 0.0))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_CSV_HEADER.split(","))
    N = len(traj.err_xi) - 1
    for k in range(N + 1):
        writer.writerow(
            [
                k,
                repr(float(traj.thetas[k])),
                repr(float(traj.x[k, 0])),
                repr(float(traj.xstar[k, 0])),
                repr(float(traj.err[k])),
                repr(float(traj.err_xi[k])),
                "" if rhs is None else repr(float(rhs[k])),
            ]
        )
    return buf.getvalue()
