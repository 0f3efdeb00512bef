"""Quadratic constraints on the feedback channels and plant augmentation.

Two families are implemented:

* pointwise constraints (sector for gradient channels, passivity for
  set-normal channels): static filters whose weighted quadratic is
  nonnegative at every step;
* a variational constraint for gradient channels of time-varying objectives:
  a one-state-per-signal filter whose geometrically discounted quadratic sum
  is bounded below by a telescoping function-variation term instead of zero.
  It takes two extra inputs, the minimizer increment and the gradient-map
  increment at a frozen point.

``filter_outputs_analytic`` re-derives the variational filter's outputs
directly from signal windows (no state-space recursion); the realization and
the analytic route are kept as two independent code paths on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algorithms import SectorSchedule
from .lpv import ONE, BasisFn, LpvSystem, MatrixFn

__all__ = [
    "M_SECTOR",
    "variational_multiplier",
    "IqcFilter",
    "make_sector_iqc",
    "make_passivity_iqc",
    "make_variational_iqc",
    "run_filter",
    "filter_outputs_analytic",
    "discounted_quadratic_sum",
    "variational_lower_bound",
    "ChannelBlock",
    "augment_pointwise",
    "AugmentedPlant",
    "augment_variational",
]

M_SECTOR = np.array([[0.0, 1.0], [1.0, 0.0]])


def variational_multiplier() -> np.ndarray:
    """Core multiplier of the variational constraint (6 filter outputs)."""
    M = np.zeros((6, 6))
    M[0, 1] = M[1, 0] = 0.5
    M[2, 2] = 1.0
    M[3, 3] = -1.0
    M[4, 4] = 0.5
    M[5, 5] = -0.5
    return M


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IqcFilter:
    """Per-channel constraint filter.

    ``B_blocks``/``D_blocks`` map input names from ``input_signature`` to
    column MatrixFns.  ``rhs_kind`` is ``'zero'`` when the weighted quadratic
    is nonnegative pointwise, ``'offby1'`` when it obeys the variational
    (function-variation) lower bound instead.
    """

    n_zeta: int
    n_rows: int
    A_psi: MatrixFn | None
    B_blocks: dict[str, MatrixFn]
    C_psi: MatrixFn | None
    D_blocks: dict[str, MatrixFn]
    M: np.ndarray
    rhs_kind: str
    input_signature: tuple[str, ...]


def make_sector_iqc(sched: SectorSchedule) -> IqcFilter:
    """Static sector constraint for a gradient channel: with y the query-point
    error and u the gradient error, (L y - u) and (u - m y) have nonnegative
    product at every step."""
    m_fn, L_fn = sched.m_fn(), sched.L_fn()
    Lb = BasisFn("L", L_fn)
    mb = BasisFn("m", m_fn)
    D_y = MatrixFn([Lb, mb], [np.array([[1.0], [0.0]]), np.array([[0.0], [-1.0]])])
    D_u = MatrixFn.constant(np.array([[-1.0], [1.0]]))
    return IqcFilter(
        n_zeta=0,
        n_rows=2,
        A_psi=None,
        B_blocks={},
        C_psi=None,
        D_blocks={"y": D_y, "u": D_u},
        M=M_SECTOR.copy(),
        rhs_kind="zero",
        input_signature=("y", "u"),
    )


def make_passivity_iqc() -> IqcFilter:
    """Static monotonicity constraint for a set-normal channel: the product of
    the point error and the normal-element error is nonnegative."""
    return IqcFilter(
        n_zeta=0,
        n_rows=2,
        A_psi=None,
        B_blocks={},
        C_psi=None,
        D_blocks={
            "y": MatrixFn.constant(np.array([[1.0], [0.0]])),
            "u": MatrixFn.constant(np.array([[0.0], [1.0]])),
        },
        M=M_SECTOR.copy(),
        rhs_kind="zero",
        input_signature=("y", "u"),
    )


def _sqrt_gain_basis(sched: SectorSchedule) -> BasisFn:
    m_fn, L_fn = sched.m_fn(), sched.L_fn()
    return BasisFn(
        "sqrt(m(L-m)/2)",
        lambda th: np.sqrt(np.maximum(m_fn(th) * (L_fn(th) - m_fn(th)), 0.0) / 2.0),
    )


def make_variational_iqc(sched: SectorSchedule, rho: float) -> IqcFilter:
    """Variational constraint filter for one gradient channel at rate ``rho``.

    Inputs: ``y`` query-point error, ``u`` gradient error, ``dxstar``
    minimizer increment, ``ddelta`` gradient-map increment at the query point.
    Four filter states hold the shifted previous signals; six outputs feed the
    indefinite multiplier of :func:`variational_multiplier`.
    """
    if not (0.0 < rho):
        raise ValueError("rho must be positive")
    m_fn, L_fn = sched.m_fn(), sched.L_fn()
    Lb = BasisFn("L", L_fn)
    mb = BasisFn("m", m_fn)
    ab = _sqrt_gain_basis(sched)
    r, r2 = float(rho), float(rho) ** 2

    col = lambda *v: np.array(v, dtype=float).reshape(-1, 1)

    B_y = MatrixFn([ONE, mb, ab], [col(1, 0, 0, 0), col(0, 0, -1, 0), col(0, 0, 0, 1)])
    B_u = MatrixFn.constant(col(0, 1, 1, 0))
    B_dx = MatrixFn.constant(col(1, 0, 0, 0))
    B_dd = MatrixFn.constant(col(0, -1, 0, 0))

    C_one = np.zeros((6, 4))
    C_one[0, 1] = r2
    C_one[2, 3] = r
    C_one[4, 2] = r
    C_one[5, 1] = r
    C_L = np.zeros((6, 4))
    C_L[0, 0] = -r2
    C_a = np.zeros((6, 4))
    C_a[3, 0] = r
    C_m = np.zeros((6, 4))
    C_m[5, 0] = -r
    C_psi = MatrixFn([ONE, Lb, ab, mb], [C_one, C_L, C_a, C_m])

    D_y = MatrixFn([Lb, mb], [col(1, 0, 0, 0, 0, 0), col(0, -1, 0, 0, 0, 0)])
    D_u = MatrixFn.constant(col(-1, 1, 0, 0, 0, 0))
    zeros6 = MatrixFn.zeros(6, 1)

    return IqcFilter(
        n_zeta=4,
        n_rows=6,
        A_psi=MatrixFn.zeros(4, 4),
        B_blocks={"y": B_y, "u": B_u, "dxstar": B_dx, "ddelta": B_dd},
        C_psi=C_psi,
        D_blocks={"y": D_y, "u": D_u, "dxstar": zeros6, "ddelta": zeros6},
        M=variational_multiplier(),
        rhs_kind="offby1",
        input_signature=("y", "u", "dxstar", "ddelta"),
    )


# ---------------------------------------------------------------------------
# Signal-level evaluation (two independent routes)
# ---------------------------------------------------------------------------

def run_filter(
    filt: IqcFilter, inputs: dict[str, np.ndarray], thetas: np.ndarray
) -> np.ndarray:
    """State-space route: iterate the filter from zero state over a window.

    ``inputs`` maps each name in the filter's signature to a length-N signal;
    ``thetas`` is (N, n_theta).  Returns the (N, n_rows) output trajectory.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    N = thetas.shape[0]
    sig = {k: np.asarray(v, dtype=float) for k, v in inputs.items()}
    for k in filt.input_signature:
        if sig[k].shape != (N,):
            raise ValueError(f"input {k!r} must have shape ({N},)")
    zeta = np.zeros(filt.n_zeta)
    psi = np.zeros((N, filt.n_rows))
    for k in range(N):
        th = thetas[k]
        out = filt.C_psi(th) @ zeta if filt.n_zeta else np.zeros(filt.n_rows)
        for name in filt.input_signature:
            out = out + filt.D_blocks[name](th)[:, 0] * sig[name][k]
        psi[k] = out
        if filt.n_zeta:
            nxt = filt.A_psi(th) @ zeta
            for name in filt.input_signature:
                nxt = nxt + filt.B_blocks[name](th)[:, 0] * sig[name][k]
            zeta = nxt
    return psi


def filter_outputs_analytic(
    window: dict[str, np.ndarray], sched: SectorSchedule, rho: float
) -> np.ndarray:
    """Analytic route: the variational filter's outputs written directly in
    terms of the raw window signals (no recursion, no filter matrices).

    ``window`` holds equal-length signals ``y`` (query-point error), ``u``
    (gradient error), ``dxstar``, ``ddelta`` and the parameter path ``theta``
    of shape (N, n_theta).  Row k of the result contains, in order: the
    discounted smoothness-gap pair, the cross-window comparison pair, and the
    previous-step sector pair, all as used by :func:`variational_multiplier`.
    """
    y = np.asarray(window["y"], dtype=float)
    u = np.asarray(window["u"], dtype=float)
    dx = np.asarray(window["dxstar"], dtype=float)
    dd = np.asarray(window["ddelta"], dtype=float)
    thetas = np.atleast_2d(np.asarray(window["theta"], dtype=float))
    N = y.size
    m_fn, L_fn = sched.m_fn(), sched.L_fn()
    m = m_fn(thetas)
    L = L_fn(thetas)
    a = np.sqrt(np.maximum(m * (L - m), 0.0) / 2.0)
    r, r2 = float(rho), float(rho) ** 2

    psi = np.zeros((N, 6))
    psi[:, 0] = L * y - u
    psi[:, 1] = u - m * y
    if N > 1:
        xp = y[:-1] + dx[:-1]          # previous point in current error coords
        up = u[:-1] - dd[:-1]          # current gradient map at previous point
        psi[1:, 0] -= r2 * (L[1:] * xp - up)
        psi[1:, 2] = r * a[:-1] * y[:-1]
        psi[1:, 3] = r * a[1:] * xp
        psi[1:, 4] = r * (u[:-1] - m[:-1] * y[:-1])
        psi[1:, 5] = r * (up - m[1:] * xp)
    return psi


def discounted_quadratic_sum(psi: np.ndarray, M: np.ndarray, rho: float) -> float:
    """``sum_k rho^(2(N-k)) psi_k' M psi_k`` over a window of N rows."""
    N = psi.shape[0]
    w = float(rho) ** (2.0 * (N - 1 - np.arange(N)))
    return float(np.einsum("k,ki,ij,kj->", w, psi, M, psi))


def variational_lower_bound(
    fhat_prev: np.ndarray,
    fhat_curr: np.ndarray,
    gap_prev: np.ndarray,
    gap_curr: np.ndarray,
    rho: float,
) -> float:
    """Telescoping lower bound certified by the variational constraint.

    For k = 1..N-1 (0-indexed arrays of length N-1), ``fhat_prev[k-1]`` is the
    step-(k-1) shifted objective at the step-(k-1) query point,
    ``fhat_curr[k-1]`` the step-k shifted objective at the same point, and
    ``gap_*`` the corresponding smoothness gaps ``L - m``.  Returns

        sum_k rho^(2(N-k)) * (gap_prev f̂_prev - gap_curr f̂_curr)(k),

    the quantity that the discounted quadratic sum over the same window
    (N steps, ending at index N-1) dominates.
    """
    n = np.asarray(fhat_prev, dtype=float).size
    if n == 0:
        return 0.0
    N = n  # window has N+1 rows, telescoping terms k = 1..N
    k = np.arange(1, N + 1)
    w = float(rho) ** (2.0 * (N - k + 1))
    return float(
        np.sum(w * (np.asarray(gap_prev) * np.asarray(fhat_prev)
                    - np.asarray(gap_curr) * np.asarray(fhat_curr)))
    )


# ---------------------------------------------------------------------------
# Plant augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelBlock:
    """Row range of one channel's constraint outputs in a stacked plant."""

    rows: tuple[int, int]
    kind: str
    channel: int
    M: np.ndarray


def _unit_row(i: int, w: int) -> MatrixFn:
    e = np.zeros((1, w))
    e[0, i] = 1.0
    return MatrixFn.constant(e)


def augment_pointwise(
    sys: LpvSystem, sched: SectorSchedule
) -> tuple[MatrixFn, MatrixFn]:
    """Stack the static per-channel constraint outputs onto the plant.

    Returns (C_hat, D_hat) with two rows per channel, gradient channels first
    (sector pairs), then set-normal channels (monotonicity pairs).
    """
    if sys.d != 1:
        raise ValueError("augmentation operates on the d=1 reduction")
    w = sys.n_channels
    sec = make_sector_iqc(sched)
    pas = make_passivity_iqc()
    C_rows, D_rows = [], []
    for i in range(w):
        filt = sec if i < sys.p else pas
        Ci = sys.C.row(i)
        Di = sys.D.row(i)
        C_rows.append(filt.D_blocks["y"] @ Ci)
        D_rows.append(filt.D_blocks["y"] @ Di + filt.D_blocks["u"] @ _unit_row(i, w))
    return MatrixFn.vstack(C_rows), MatrixFn.vstack(D_rows)


@dataclass(frozen=True)
class AugmentedPlant:
    """Plant with per-gradient-channel variational filters appended, plus the
    pointwise sector rows, ready for rate certification with disturbance
    inputs (state-offset increment, gradient-map increment)."""

    A_hat: MatrixFn
    B_hat: MatrixFn
    B_dxi: MatrixFn
    B_ddelta: MatrixFn
    C_hat: MatrixFn
    D_hat: MatrixFn
    D_dxi: MatrixFn
    D_ddelta: MatrixFn
    n_eta: int
    n_xi: int
    n_zeta_total: int
    p: int
    rho: float
    channels: tuple[ChannelBlock, ...]


def augment_variational(
    sys: LpvSystem, sched: SectorSchedule, rho: float
) -> AugmentedPlant:
    """Append one variational filter per gradient channel (plus the channel's
    sector rows) to the plant, in error coordinates with disturbance inputs.

    Only unconstrained plants are supported: set-normal channels have no
    variational description here.
    """
    if sys.q != 0:
        raise ValueError("variational augmentation requires q = 0")
    if sys.d != 1:
        raise ValueError("augmentation operates on the d=1 reduction")
    p, n = sys.p, sys.n_xi
    sec = make_sector_iqc(sched)
    var = make_variational_iqc(sched, rho)
    nz = var.n_zeta * p

    def stack_diag(col_mf: MatrixFn, cols: int) -> MatrixFn:
        """Block-diagonal placement of a column MatrixFn per channel."""
        return MatrixFn.block(
            [[col_mf if j == i else None for j in range(cols)] for i in range(p)]
        )

    Bys = stack_diag(var.B_blocks["y"], p)        # (4p, p)
    Byu = stack_diag(var.B_blocks["u"], p)        # (4p, p)
    Bdd = stack_diag(var.B_blocks["ddelta"], p)   # (4p, p)
    Bdx = MatrixFn.vstack([var.B_blocks["dxstar"]] * p)  # (4p, 1)
    C_first = sys.C.row(0)  # any gradient row maps the state offset to the
    # query-point offset at the shared fixed point

    A_hat = MatrixFn.block(
        [[sys.A, None], [Bys @ sys.C, MatrixFn.zeros(nz, nz)]]
    )
    B_hat = MatrixFn.block([[sys.B], [Bys @ sys.D + Byu]])
    B_dxi = MatrixFn.block([[MatrixFn.eye(n)], [Bdx @ C_first]])
    B_ddelta = MatrixFn.block([[MatrixFn.zeros(n, p)], [Bdd]])

    Cxi_rows, Czeta_grid, D_rows, channels = [], [], [], []
    row0 = 0
    for i in range(p):
        Ci, Di, Ei = sys.C.row(i), sys.D.row(i), _unit_row(i, p)
        Cxi_rows.append(sec.D_blocks["y"] @ Ci)
        Cxi_rows.append(var.D_blocks["y"] @ Ci)
        Czeta_grid.append(
            [
                MatrixFn.block([[MatrixFn.zeros(2, 4)], [var.C_psi]])
                if j == i
                else None
                for j in range(p)
            ]
        )
        D_rows.append(sec.D_blocks["y"] @ Di + sec.D_blocks["u"] @ Ei)
        D_rows.append(var.D_blocks["y"] @ Di + var.D_blocks["u"] @ Ei)
        channels.append(ChannelBlock((row0, row0 + 2), "sector", i, sec.M))
        channels.append(ChannelBlock((row0 + 2, row0 + 8), "variational", i, var.M))
        row0 += 8

    C_hat = MatrixFn.hstack(
        [MatrixFn.vstack(Cxi_rows), MatrixFn.block(Czeta_grid)]
    )
    D_hat = MatrixFn.vstack(D_rows)
    n_rows = 8 * p
    return AugmentedPlant(
        A_hat=A_hat,
        B_hat=B_hat,
        B_dxi=B_dxi,
        B_ddelta=B_ddelta,
        C_hat=C_hat,
        D_hat=D_hat,
        D_dxi=MatrixFn.zeros(n_rows, n),
        D_ddelta=MatrixFn.zeros(n_rows, p),
        n_eta=n + nz,
        n_xi=n,
        n_zeta_total=nz,
        p=p,
        rho=float(rho),
        channels=tuple(channels),
    )
