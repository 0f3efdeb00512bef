"""Rate certification: LMI assembly over the consistent grid, bisection on the
rate, sensitivity trade-off programs, certificates and sweeps.

Two certification routes are provided:

* ``pointwise``: static sector/monotonicity constraints on every channel; the
  certificate bounds the tracking error by a geometric term plus a discounted
  sum of optimizer-increment norms.
* ``variational``: per-gradient-channel variational constraint filters (with
  the sector rows retained); the certificate additionally prices the
  gradient-map increments (gamma_delta), the state-offset increments
  (gamma_xi) and function-variation terms (per-channel multipliers).

Every feasible certificate is re-verified by an independent eigenvalue check
before it is returned.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .algorithms import SectorSchedule, make_algorithm
from .conic import (
    ConicProblem,
    NonnegConstraint,
    PsdConstraint,
    smat,
    solve,
    svec,
    svec_dim,
)
from .iqc import M_SECTOR, AugmentedPlant, augment_pointwise, augment_variational
from .lpv import (
    ONE,
    BasisFn,
    ConsistentGrid,
    LpvSystem,
    MatrixFn,
    ParamDomain,
    build_consistent_grid,
    check_fixed_point,
    coord,
)

__all__ = [
    "CertificationError",
    "lyap_basis_of_degree",
    "assemble_pointwise",
    "assemble_variational",
    "bisect_rate",
    "Certificate",
    "CellSpec",
    "certify_cell",
    "evaluate_bound_constants",
    "recheck_certificate",
    "RecheckReport",
    "sweep",
    "sweep_rows_to_csv",
    "SWEEP_CSV_HEADER",
    "certificate_to_json",
    "certificate_from_json",
    "DEFAULT_TOL_RHO",
    "DEFAULT_EPS_P",
    "DEFAULT_EPS_FEAS",
]

DEFAULT_TOL_RHO = 2.0 ** -12
DEFAULT_EPS_P = 1e-6
DEFAULT_EPS_FEAS = 1e-7
# Acceptance threshold for margin-mode programs: the maximized slack minus
# the re-checked raw violation must clear this.  Near-boundary slacks on the
# certification lattice run ~1e-7, so the threshold sits one decade below.
DEFAULT_MARGIN_TOL = 1e-8
# Grid-pair LMIs are assembled with a -eps_feas margin, so an honest solution
# must re-check nonpositive in raw units; off-grid probes measure the gridding
# approximation and are judged relative to the block norm.
_GRID_RECHECK_ABS = 0.0
_OFFGRID_RECHECK_REL = 1e-5
# Minimize-mode optima are tight by construction (no interior slack is left
# once the objective is minimized), so the off-grid probe gets a looser
# threshold there; bugs show up orders of magnitude above either limit.
_OFFGRID_RECHECK_REL_TIGHT = 1e-3


class CertificationError(RuntimeError):
    """Structural failure while assembling or validating a certificate."""


# ---------------------------------------------------------------------------
# Lyapunov parametrization
# ---------------------------------------------------------------------------

_THETA_POWERS: dict[int, BasisFn] = {}


def _theta_power(k: int) -> BasisFn:
    if k not in _THETA_POWERS:
        _THETA_POWERS[k] = BasisFn(
            f"theta[0]^{k}", lambda th, k=k: th[..., 0] ** k
        )
    return _THETA_POWERS[k]


def lyap_basis_of_degree(degree: int) -> tuple[BasisFn, ...]:
    """Polynomial scalar basis ``1, theta, theta^2, ...`` for P(theta)."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    out: list[BasisFn] = [ONE]
    if degree >= 1:
        out.append(coord(0))
    for k in range(2, degree + 1):
        out.append(_theta_power(k))
    return tuple(out)


def _basis_from_names(names) -> tuple[BasisFn, ...]:
    out = []
    for nm in names:
        if nm == "1":
            out.append(ONE)
        elif nm == "theta[0]":
            out.append(coord(0))
        elif nm.startswith("theta[0]^"):
            out.append(_theta_power(int(nm.split("^")[1])))
        else:
            raise ValueError(f"unknown Lyapunov basis name {nm!r}")
    return tuple(out)


def _congruence_svec_terms(K: np.ndarray) -> list[np.ndarray]:
    """For each svec basis matrix S_v (acting on K's row space), K' S_v K."""
    n = K.shape[0]
    out = []
    for r, c in zip(*np.tril_indices(n)):
        if r == c:
            out.append(np.outer(K[r], K[r]))
        else:
            G = np.outer(K[r], K[c])
            out.append((G + G.T) / math.sqrt(2.0))
    return out


# ---------------------------------------------------------------------------
# Assembly metadata (shared by extraction and the independent re-check)
# ---------------------------------------------------------------------------

@dataclass
class _AssemblyMeta:
    theorem: str
    rho: float
    basis: tuple[BasisFn, ...]
    n_P: int
    grid: ConsistentGrid
    sched: SectorSchedule
    eps_p: float
    eps_feas: float
    n_vars: int
    lam_slice: slice              # all channel multipliers, pointwise order
    lam_sector_slice: slice | None = None
    lam_var_slice: slice | None = None
    gamma_xi_index: int | None = None
    gamma_delta_index: int | None = None
    t_index: int | None = None
    margin_index: int | None = None
    sys: LpvSystem | None = None
    plant: AugmentedPlant | None = None

    @property
    def n_basis(self) -> int:
        return len(self.basis)

    def P_coeffs(self, x: np.ndarray) -> list[np.ndarray]:
        s = svec_dim(self.n_P)
        return [smat(x[i * s : (i + 1) * s]) for i in range(self.n_basis)]

    def P_of(self, x: np.ndarray, theta) -> np.ndarray:
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        P = np.zeros((self.n_P, self.n_P))
        for b, Pi in zip(self.basis, self.P_coeffs(x)):
            P += float(b(th)) * Pi
        return P

    def lmi_matrix(self, x: np.ndarray, theta, delta) -> np.ndarray:
        """Direct (formula-level) evaluation of the certification LMI block;
        feasibility requires this to be <= -eps_feas * I."""
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        thp = th + np.atleast_1d(np.asarray(delta, dtype=float))
        P = self.P_of(x, th)
        Pp = self.P_of(x, thp)
        rho2 = self.rho ** 2
        if self.theorem == "pointwise":
            sys = self.sys
            A, B = sys.A(th), sys.B(th)
            Ch, Dh = self._pw_rows
            R = np.hstack([Ch(th), Dh(th)])
            n, w = sys.n_xi, sys.n_channels
            K = np.hstack([A, B])
            Q = np.zeros((n + w, n + w))
            Q[:n, :n] -= rho2 * P
            Q += K.T @ Pp @ K
            lam = x[self.lam_slice]
            for i in range(w):
                Ri = R[2 * i : 2 * i + 2]
                Q += lam[i] * (Ri.T @ M_SECTOR @ Ri)
            return Q
        plant = self.plant
        n_eta, p, n_xi = plant.n_eta, plant.p, plant.n_xi
        K = np.hstack(
            [plant.A_hat(th), plant.B_hat(th), plant.B_dxi(th), plant.B_ddelta(th)]
        )
        R = np.hstack(
            [plant.C_hat(th), plant.D_hat(th), plant.D_dxi(th), plant.D_ddelta(th)]
        )
        T = n_eta + p + n_xi + p
        Q = np.zeros((T, T))
        Q[:n_eta, :n_eta] -= rho2 * P
        Q += K.T @ Pp @ K
        lam_sec = x[self.lam_sector_slice]
        lam_var = x[self.lam_var_slice]
        for ch in plant.channels:
            lam = lam_sec[ch.channel] if ch.kind == "sector" else lam_var[ch.channel]
            Rc = R[ch.rows[0] : ch.rows[1]]
            Q += lam * (Rc.T @ ch.M @ Rc)
        gx = x[self.gamma_xi_index]
        gd = x[self.gamma_delta_index]
        i0 = n_eta + p
        Q[i0 : i0 + n_xi, i0 : i0 + n_xi] -= gx * np.eye(n_xi)
        i1 = i0 + n_xi
        Q[i1 : i1 + p, i1 : i1 + p] -= gd * np.eye(p)
        return Q

    _pw_rows: tuple = None  # (C_hat, D_hat) for the pointwise route


# ---------------------------------------------------------------------------
# LMI assembly
# ---------------------------------------------------------------------------

def assemble_pointwise(
    sys: LpvSystem,
    sched: SectorSchedule,
    grid: ConsistentGrid,
    rho: float,
    lyap_basis: tuple[BasisFn, ...] | None = None,
    eps_p: float = DEFAULT_EPS_P,
    eps_feas: float = DEFAULT_EPS_FEAS,
) -> tuple[ConicProblem, _AssemblyMeta]:
    """Feasibility program for the pointwise certificate at rate ``rho``.

    Per grid pair: the Lyapunov decrease LMI with the channel quadratics
    weighted by nonnegative constant multipliers; per node: strict positivity
    of P(theta).

    The program maximizes a slack ``s`` with every decrease LMI tightened to
    ``<= -s I`` under a trace normalization of P.  Feasibility at ``rho`` is
    decided by the sign of the achieved slack (net of the independently
    re-checked constraint violation), which is robust where a pure
    feasibility problem would leave the decision to solver tolerances.
    """
    basis = lyap_basis or lyap_basis_of_degree(1)
    n, w = sys.n_xi, sys.n_channels
    s = svec_dim(n)
    nb = len(basis)
    lam0 = nb * s
    margin_idx = lam0 + w
    n_vars = margin_idx + 1
    C_hat, D_hat = augment_pointwise(sys, sched)
    rho2 = float(rho) ** 2

    constraints: list = []
    for th in grid.thetas:
        phi = [float(b(th)) for b in basis]
        terms: dict[int, np.ndarray] = {}
        for ib in range(nb):
            for v, Sv in enumerate(_congruence_svec_terms(np.eye(n))):
                terms[ib * s + v] = phi[ib] * Sv
        constraints.append(PsdConstraint(n, -eps_p * np.eye(n), terms))

    for th, dl in grid.iter_pairs():
        thp = th + dl
        A, B = sys.A(th), sys.B(th)
        K = np.hstack([A, B])
        R = np.hstack([C_hat(th), D_hat(th)])
        phi = [float(b(th)) for b in basis]
        phip = [float(b(thp)) for b in basis]
        KtK = _congruence_svec_terms(K)
        terms = {}
        for ib in range(nb):
            for v in range(s):
                G = -phip[ib] * KtK[v]
                if phi[ib] != 0.0:
                    Sv = np.zeros((n + w, n + w))
                    r_, c_ = np.tril_indices(n)
                    rr, cc = r_[v], c_[v]
                    val = 1.0 if rr == cc else 1.0 / math.sqrt(2.0)
                    Sv[rr, cc] = Sv[cc, rr] = val
                    G = G + rho2 * phi[ib] * Sv
                terms[ib * s + v] = G
        for i in range(w):
            Ri = R[2 * i : 2 * i + 2]
            terms[lam0 + i] = -(Ri.T @ M_SECTOR @ Ri)
        terms[margin_idx] = -np.eye(n + w)
        constraints.append(PsdConstraint(n + w, np.zeros((n + w, n + w)), terms))

    constraints.append(
        NonnegConstraint(
            w, np.zeros(w), {lam0 + i: _unit(w, i) for i in range(w)}
        )
    )
    constraints.append(_trace_bound_row(grid, basis, n, s))

    objective = np.zeros(n_vars)
    objective[margin_idx] = -1.0
    problem = ConicProblem(n_vars, objective, constraints)
    meta = _AssemblyMeta(
        theorem="pointwise",
        rho=float(rho),
        basis=basis,
        n_P=n,
        grid=grid,
        sched=sched,
        eps_p=eps_p,
        eps_feas=eps_feas,
        n_vars=n_vars,
        lam_slice=slice(lam0, lam0 + w),
        margin_index=margin_idx,
        sys=sys,
    )
    meta._pw_rows = (C_hat, D_hat)
    return problem, meta


def _trace_bound_row(grid, basis, n_P: int, s: int) -> NonnegConstraint:
    """Normalization ``sum_j tr P(theta_j) <= n_P * n_nodes``.

    The decrease LMIs and multiplier signs are invariant to scaling the whole
    decision vector, so pinning the trace makes the maximized slack an
    absolute, comparable quantity instead of one the solver can inflate.
    """
    r_, c_ = np.tril_indices(n_P)
    bound = float(n_P * len(grid.thetas))
    coeffs: dict[int, np.ndarray] = {}
    for th in grid.thetas:
        for ib, b in enumerate(basis):
            phi = float(b(th))
            if phi == 0.0:
                continue
            for v in range(s):
                if r_[v] == c_[v]:
                    idx = ib * s + v
                    coeffs[idx] = coeffs.get(idx, np.zeros(1)) - phi
    return NonnegConstraint(1, np.array([bound]), coeffs)


def _unit(n: int, i: int) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    return e


def assemble_variational(
    plant: AugmentedPlant,
    sched: SectorSchedule,
    grid: ConsistentGrid,
    rho: float,
    lyap_basis: tuple[BasisFn, ...] | None = None,
    objective_weights: tuple[float, float, float] | None = None,
    eps_p: float = DEFAULT_EPS_P,
    eps_feas: float = DEFAULT_EPS_FEAS,
) -> tuple[ConicProblem, _AssemblyMeta]:
    """Feasibility (or sensitivity-minimization) program for the variational
    certificate at rate ``rho``.

    The LMI couples the augmented plant with per-channel sector and
    variational multipliers and prices the two disturbance inputs with
    ``gamma_xi`` and ``gamma_delta``.  With ``objective_weights=(k1,k2,k3)``
    the program minimizes ``t + k1 gamma_xi + k2 gamma_delta + k3 sum(lam)``
    subject to conditioning constraints P <= t I and [P I; I t I] >= 0.

    Without objective weights the program maximizes a feasibility slack
    ``s`` (every decrease LMI tightened to ``<= -s I``) under a trace
    normalization of P, as in :func:`assemble_pointwise`.
    """
    if abs(plant.rho - float(rho)) > 1e-12:
        raise ValueError("plant was augmented at a different rate")
    basis = lyap_basis or lyap_basis_of_degree(1)
    n_eta, p, n_xi = plant.n_eta, plant.p, plant.n_xi
    s = svec_dim(n_eta)
    nb = len(basis)
    minimize = objective_weights is not None

    lam_sec0 = nb * s
    lam_var0 = lam_sec0 + p
    g_xi = lam_var0 + p
    g_dd = g_xi + 1
    n_vars = g_dd + 1
    t_idx = None
    margin_idx = None
    if minimize:
        t_idx = n_vars
        n_vars += 1
    else:
        margin_idx = n_vars
        n_vars += 1
    rho2 = float(rho) ** 2
    T = n_eta + p + n_xi + p

    constraints: list = []
    eyeN = _congruence_svec_terms(np.eye(n_eta))
    for th in grid.thetas:
        phi = [float(b(th)) for b in basis]
        terms = {
            ib * s + v: phi[ib] * eyeN[v]
            for ib in range(nb)
            for v in range(s)
            if phi[ib] != 0.0
        }
        constraints.append(
            PsdConstraint(n_eta, -eps_p * np.eye(n_eta), terms)
        )
        if minimize:
            cap_terms = {
                ib * s + v: -phi[ib] * eyeN[v]
                for ib in range(nb)
                for v in range(s)
                if phi[ib] != 0.0
            }
            cap_terms[t_idx] = np.eye(n_eta)
            constraints.append(
                PsdConstraint(n_eta, np.zeros((n_eta, n_eta)), cap_terms)
            )
            schur_terms = {}
            for ib in range(nb):
                if phi[ib] == 0.0:
                    continue
                for v in range(s):
                    G = np.zeros((2 * n_eta, 2 * n_eta))
                    G[:n_eta, :n_eta] = phi[ib] * eyeN[v]
                    schur_terms[ib * s + v] = G
            Gt = np.zeros((2 * n_eta, 2 * n_eta))
            Gt[n_eta:, n_eta:] = np.eye(n_eta)
            schur_terms[t_idx] = Gt
            const = np.zeros((2 * n_eta, 2 * n_eta))
            const[:n_eta, n_eta:] = np.eye(n_eta)
            const[n_eta:, :n_eta] = np.eye(n_eta)
            constraints.append(PsdConstraint(2 * n_eta, const, schur_terms))

    r_, c_ = np.tril_indices(n_eta)
    for th, dl in grid.iter_pairs():
        thp = th + dl
        K = np.hstack(
            [plant.A_hat(th), plant.B_hat(th), plant.B_dxi(th), plant.B_ddelta(th)]
        )
        R = np.hstack(
            [plant.C_hat(th), plant.D_hat(th), plant.D_dxi(th), plant.D_ddelta(th)]
        )
        phi = [float(b(th)) for b in basis]
        phip = [float(b(thp)) for b in basis]
        KtK = _congruence_svec_terms(K)
        terms = {}
        for ib in range(nb):
            for v in range(s):
                G = -phip[ib] * KtK[v]
                if phi[ib] != 0.0:
                    rr, cc = r_[v], c_[v]
                    val = 1.0 if rr == cc else 1.0 / math.sqrt(2.0)
                    G = G.copy()
                    G[rr, cc] += rho2 * phi[ib] * val
                    if rr != cc:
                        G[cc, rr] += rho2 * phi[ib] * val
                terms[ib * s + v] = G
        for ch in plant.channels:
            Rc = R[ch.rows[0] : ch.rows[1]]
            idx = (lam_sec0 if ch.kind == "sector" else lam_var0) + ch.channel
            G = -(Rc.T @ ch.M @ Rc)
            if idx in terms:
                terms[idx] = terms[idx] + G
            else:
                terms[idx] = G
        Gx = np.zeros((T, T))
        i0 = n_eta + p
        Gx[i0 : i0 + n_xi, i0 : i0 + n_xi] = np.eye(n_xi)
        terms[g_xi] = Gx
        Gd = np.zeros((T, T))
        i1 = i0 + n_xi
        Gd[i1 : i1 + p, i1 : i1 + p] = np.eye(p)
        terms[g_dd] = Gd
        if minimize:
            constraints.append(PsdConstraint(T, -eps_feas * np.eye(T), terms))
        else:
            terms[margin_idx] = -np.eye(T)
            constraints.append(PsdConstraint(T, np.zeros((T, T)), terms))

    count = 2 * p + 2 + (1 if minimize else 0)
    nn_terms = {}
    nn_const = np.zeros(count)
    for j in range(2 * p + 2):
        nn_terms[lam_sec0 + j] = _unit(count, j)
    if minimize:
        nn_terms[t_idx] = _unit(count, count - 1)
        nn_const[count - 1] = -1.0  # t >= 1
    constraints.append(NonnegConstraint(count, nn_const, nn_terms))
    if not minimize:
        constraints.append(_trace_bound_row(grid, basis, n_eta, s))

    objective = np.zeros(n_vars)
    if minimize:
        k1, k2, k3 = objective_weights
        objective[t_idx] = 1.0
        objective[g_xi] = k1
        objective[g_dd] = k2
        for i in range(p):
            objective[lam_var0 + i] = k3
    else:
        objective[margin_idx] = -1.0

    problem = ConicProblem(n_vars, objective, constraints)
    meta = _AssemblyMeta(
        theorem="variational",
        rho=float(rho),
        basis=basis,
        n_P=n_eta,
        grid=grid,
        sched=sched,
        eps_p=eps_p,
        eps_feas=eps_feas,
        n_vars=n_vars,
        lam_slice=slice(lam_sec0, lam_var0 + p),
        lam_sector_slice=slice(lam_sec0, lam_sec0 + p),
        lam_var_slice=slice(lam_var0, lam_var0 + p),
        gamma_xi_index=g_xi,
        gamma_delta_index=g_dd,
        t_index=t_idx,
        margin_index=margin_idx,
        plant=plant,
    )
    return problem, meta


# ---------------------------------------------------------------------------
# Certificate
# ---------------------------------------------------------------------------

@dataclass
class Certificate:
    """Outcome of one certification cell."""

    theorem: str
    rho: float
    feasible: bool
    algorithm: str = ""
    kappa: float = float("nan")
    nu_fraction: float | None = None
    m_value: float = 1.0
    theta_lo: float = float("nan")
    theta_hi: float = float("nan")
    delta_lo: float = 0.0
    delta_hi: float = 0.0
    lyap_basis_names: tuple[str, ...] = ()
    P_coeffs: tuple[np.ndarray, ...] = ()
    lambda_p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_q: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_sector: np.ndarray | None = None
    gamma_xi: float | None = None
    gamma_delta: float | None = None
    t_cond: float | None = None
    margin: float | None = None
    c: float | None = None
    c1: float | None = None
    c2: float | None = None
    lam_min: float | None = None
    lam_max: float | None = None
    gamma_f: np.ndarray | None = None
    grid_meta: dict = field(default_factory=dict)
    cell: dict = field(default_factory=dict)
    n_solves: int = 0

    @property
    def lambda_p_sum(self) -> float:
        return float(np.sum(self.lambda_p)) if self.lambda_p.size else 0.0

    def P_fn(self) -> MatrixFn:
        basis = _basis_from_names(self.lyap_basis_names)
        return MatrixFn(basis, self.P_coeffs)

    def sector(self) -> SectorSchedule:
        return SectorSchedule.affine_in_theta(self.m_value)

    def domain(self) -> ParamDomain:
        return ParamDomain(
            [self.theta_lo], [self.theta_hi], [self.delta_lo], [self.delta_hi]
        )


def evaluate_bound_constants(cert: Certificate, theta_ref: float | None = None) -> dict:
    """Eigenvalue extrema of P over a fine grid and the theorem constants.

    Returns lam_min, lam_max, and c (pointwise) or (c1, c2) plus the
    per-channel function-variation prices gamma_f = lambda * rho^2 * (L - m)
    evaluated at ``theta_ref`` (default: the domain's upper endpoint).
    """
    if not cert.feasible:
        raise CertificationError("bound constants require a feasible certificate")
    P = cert.P_fn()
    n_fine = max(2, 10 * int(cert.grid_meta.get("n_nodes", 11)) + 1)
    if cert.theta_hi > cert.theta_lo:
        ths = np.linspace(cert.theta_lo, cert.theta_hi, n_fine)
    else:
        ths = np.array([cert.theta_lo])
    lam_min, lam_max = np.inf, -np.inf
    for t in ths:
        w = np.linalg.eigvalsh(P([t]))
        lam_min = min(lam_min, float(w[0]))
        lam_max = max(lam_max, float(w[-1]))
    out = {"lam_min": lam_min, "lam_max": lam_max}
    if cert.theorem == "pointwise":
        out["c"] = math.sqrt(lam_max / lam_min)
    else:
        out["c1"] = lam_max / lam_min
        out["c2"] = 1.0 / lam_min
        th = cert.theta_hi if theta_ref is None else float(theta_ref)
        sched = cert.sector()
        gap = sched.L_at([th]) - sched.m_at([th])
        out["gamma_f"] = cert.lambda_p * cert.rho ** 2 * gap
    return out


def _certificate_from_solution(
    meta: _AssemblyMeta, x: np.ndarray | None, rho: float, feasible: bool
) -> Certificate:
    cert = Certificate(
        theorem=meta.theorem,
        rho=float(rho),
        feasible=feasible,
        lyap_basis_names=tuple(b.name for b in meta.basis),
    )
    dom = meta.grid.domain
    cert.theta_lo = float(dom.lo[0])
    cert.theta_hi = float(dom.hi[0])
    cert.delta_lo = float(dom.delta_lo[0])
    cert.delta_hi = float(dom.delta_hi[0])
    cert.grid_meta = {
        "n_nodes": len(meta.grid.nodes),
        "n_pairs": meta.grid.n_pairs,
        "basis": ";".join(b.name for b in meta.basis),
    }
    if not feasible or x is None:
        return cert
    cert.P_coeffs = tuple(meta.P_coeffs(x))
    if meta.margin_index is not None:
        cert.margin = float(x[meta.margin_index])
    if meta.theorem == "pointwise":
        lam = x[meta.lam_slice]
        p, q = meta.sys.p, meta.sys.q
        cert.lambda_p = lam[:p].copy()
        cert.lambda_q = lam[p:].copy()
    else:
        cert.lambda_sector = x[meta.lam_sector_slice].copy()
        cert.lambda_p = x[meta.lam_var_slice].copy()
        cert.lambda_q = np.zeros(0)
        cert.gamma_xi = float(x[meta.gamma_xi_index])
        cert.gamma_delta = float(x[meta.gamma_delta_index])
        if meta.t_index is not None:
            cert.t_cond = float(x[meta.t_index])
    consts = evaluate_bound_constants(cert)
    cert.lam_min = consts["lam_min"]
    cert.lam_max = consts["lam_max"]
    cert.c = consts.get("c")
    cert.c1 = consts.get("c1")
    cert.c2 = consts.get("c2")
    cert.gamma_f = consts.get("gamma_f")
    return cert


# ---------------------------------------------------------------------------
# Independent re-check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecheckReport:
    ok: bool
    max_violation_grid: float
    max_rel_violation_offgrid: float
    scale: float


def recheck_certificate(
    meta: _AssemblyMeta,
    x: np.ndarray,
    n_offgrid: int = 50,
    seed: int = 0,
    offgrid_rel_tol: float = _OFFGRID_RECHECK_REL,
) -> RecheckReport:
    """Re-evaluate every grid-pair LMI (and P-positivity) by direct formula
    and eigenvalue computation, then probe random admissible off-grid pairs.

    Grid violations are judged in raw units: the LMIs are assembled with a
    strict ``-eps_feas`` margin, so an honest solution must re-check
    nonpositive outright.  Off-grid probing is a smoke test of the gridding
    approximation and is judged relative to the largest block norm.
    """
    dom = meta.grid.domain
    scale = 1.0
    worst_grid = -np.inf
    for th, dl in meta.grid.iter_pairs():
        Q = meta.lmi_matrix(x, th, dl)
        w = np.linalg.eigvalsh(0.5 * (Q + Q.T))
        scale = max(scale, float(np.abs(w).max()))
        worst_grid = max(worst_grid, float(w[-1]))
    for th in meta.grid.thetas:
        wP = np.linalg.eigvalsh(meta.P_of(x, th))
        worst_grid = max(worst_grid, float(-wP[0]))

    rng = np.random.default_rng(seed)
    worst_off = -np.inf
    for _ in range(n_offgrid):
        th = dom.lo + (dom.hi - dom.lo) * rng.random(dom.n_theta)
        d_lo, d_hi = dom.admissible_delta_interval(th)
        dl = d_lo + (d_hi - d_lo) * rng.random(dom.n_theta)
        Q = meta.lmi_matrix(x, th, dl)
        w = np.linalg.eigvalsh(0.5 * (Q + Q.T))
        worst_off = max(worst_off, float(w[-1]))
    if n_offgrid == 0:
        worst_off = -np.inf

    rel_off = worst_off / scale if np.isfinite(worst_off) else -np.inf
    ok = worst_grid <= _GRID_RECHECK_ABS and (
        not np.isfinite(rel_off) or rel_off <= offgrid_rel_tol
    )
    return RecheckReport(ok, worst_grid, rel_off, scale)


# ---------------------------------------------------------------------------
# Bisection on the rate
# ---------------------------------------------------------------------------

def _solution_certifies(
    sol, meta, margin_tol: float = DEFAULT_MARGIN_TOL
) -> bool:
    """Decide whether a solver outcome genuinely certifies feasibility.

    For margin-mode programs the achieved slack must dominate the worst raw
    constraint violation by ``margin_tol``; this makes the decision a sign
    test on an optimized quantity rather than a residual-threshold test,
    which on badly scaled blocks can pass points of an infeasible program.
    """
    if sol.x is None or sol.solver_status not in ("Solved", "AlmostSolved"):
        return False
    if meta.margin_index is None:
        return sol.status == "optimal"
    margin = float(sol.x[meta.margin_index])
    viol = float(sol.max_violation) if sol.max_violation is not None else math.inf
    return margin - viol >= margin_tol


_GAMMA_PIN_LADDER = (1e4, 1e7)


def _pin_gamma(problem: ConicProblem, meta, value: float) -> ConicProblem:
    """Copy of the program with both disturbance prices fixed to ``value``.

    The decrease LMI is monotone in the prices (each enters only through a
    negated diagonal block), so pinning them high preserves soundness; it
    removes the long narrow valley that stalls interior-point iterations
    when the prices must travel orders of magnitude from their cold start
    while the feasibility slack stays near zero.
    """
    rows = [
        NonnegConstraint(
            2, np.array([-value, value]), {idx: np.array([1.0, -1.0])}
        )
        for idx in (meta.gamma_xi_index, meta.gamma_delta_index)
    ]
    return ConicProblem(
        problem.n_vars, problem.objective, list(problem.constraints) + rows
    )


def _solve_certified(problem, meta, feas_tol: float = DEFAULT_EPS_FEAS):
    """Solve and decide certification in one step.

    Stalled margin-mode solves with free disturbance prices are retried with
    the prices pinned; every retry's accept decision still rests on the
    original-data violation check, so the rescue can only recover missed
    feasible points, never admit infeasible ones.
    """
    sol = solve(problem, feas_tol=feas_tol)
    if _solution_certifies(sol, meta):
        return True, sol
    if meta.margin_index is not None and meta.gamma_xi_index is not None:
        for value in _GAMMA_PIN_LADDER:
            cand = solve(_pin_gamma(problem, meta, value), feas_tol=feas_tol)
            if _solution_certifies(cand, meta):
                return True, cand
    return False, sol


def bisect_rate(
    builder,
    rho_lo: float | None = None,
    rho_hi: float | None = None,
    tol_rho: float = DEFAULT_TOL_RHO,
    feas_tol: float = DEFAULT_EPS_FEAS,
) -> Certificate:
    """Smallest LMI-feasible rate on the dyadic lattice of step ``tol_rho``.

    ``builder(rho)`` must return an ``(problem, meta)`` pair.  The upper end
    is probed first; if it is infeasible the result is an infeasible
    certificate at ``rho_hi``.  Solver outcomes that certify nothing are
    treated as infeasible (never as feasible).

    Margin-mode programs are accepted only when the maximized slack,
    reduced by the independently re-computed worst constraint violation,
    stays at or above ``feas_tol``.
    """
    N = int(round(1.0 / tol_rho))
    if N < 2:
        raise ValueError("tol_rho too coarse")
    lo = tol_rho if rho_lo is None else rho_lo
    hi = 1.0 - tol_rho if rho_hi is None else rho_hi
    if not (0.0 < lo < hi <= 1.0):
        raise ValueError("need 0 < rho_lo < rho_hi <= 1")
    i_lo = max(1, math.ceil(lo * N - 1e-9))
    i_hi = min(N, math.floor(hi * N + 1e-9))

    n_solves = 0

    def attempt(i: int):
        nonlocal n_solves
        problem, meta = builder(i / N)
        ok, sol = _solve_certified(problem, meta, feas_tol)
        n_solves += 1
        return ok, sol, meta

    ok_hi, sol_hi, meta_hi = attempt(i_hi)
    if not ok_hi:
        cert = _certificate_from_solution(meta_hi, None, hi, False)
        cert.n_solves = n_solves
        return cert

    ok_lo, sol_lo, meta_lo = attempt(i_lo)
    if ok_lo:
        cert = _certificate_from_solution(meta_lo, sol_lo.x, i_lo / N, True)
        cert.n_solves = n_solves
        return cert

    lo_i, hi_i = i_lo, i_hi
    best = (sol_hi, meta_hi, i_hi)
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        ok, sol, meta = attempt(mid)
        if ok:
            hi_i = mid
            best = (sol, meta, mid)
        else:
            lo_i = mid
    sol, meta, idx = best
    cert = _certificate_from_solution(meta, sol.x, idx / N, True)
    cert.n_solves = n_solves
    return cert


# ---------------------------------------------------------------------------
# Certification cells and sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellSpec:
    """Everything needed to reproduce one certification run."""

    algorithm: str
    theorem: str
    kappa: float
    nu_fraction: float = 0.0
    m_value: float = 1.0
    theta_lo_frac: float = 0.8
    n_nodes: int = 11
    lyap_degree: int = 1
    tol_rho: float = DEFAULT_TOL_RHO
    refine: bool = False
    objective_weights: tuple[float, float, float] | None = None
    rho_lo: float | None = None
    rho_hi: float | None = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if d["objective_weights"] is not None:
            d["objective_weights"] = list(d["objective_weights"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CellSpec":
        d = dict(d)
        if d.get("objective_weights") is not None:
            d["objective_weights"] = tuple(d["objective_weights"])
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def domain(self) -> ParamDomain:
        L_nom = self.kappa * self.m_value
        nu_max = L_nom / 5.0
        nu = self.nu_fraction * nu_max
        return ParamDomain(
            [self.theta_lo_frac * L_nom], [L_nom], [-nu], [nu]
        )

    def build(self):
        """(domain, sched, sys, grid) for this cell."""
        dom = self.domain()
        sched = SectorSchedule.affine_in_theta(self.m_value)
        sys = make_algorithm(self.algorithm, sched, L_ref=float(dom.hi[0]))
        n_delta = 2 if self.lyap_degree <= 1 else 3
        grid = build_consistent_grid(dom, self.n_nodes, n_delta)
        return dom, sched, sys, grid


def _bisect_for_grid(spec: CellSpec, sched, sys, grid) -> Certificate:
    basis = lyap_basis_of_degree(spec.lyap_degree)
    if spec.theorem == "pointwise":
        def builder(rho):
            return assemble_pointwise(sys, sched, grid, rho, basis)
    elif spec.theorem == "variational":
        def builder(rho):
            plant = augment_variational(sys, sched, rho)
            return assemble_variational(
                plant, sched, grid, rho, basis, spec.objective_weights
            )
    else:
        raise ValueError(f"unknown theorem {spec.theorem!r}")
    return bisect_rate(builder, spec.rho_lo, spec.rho_hi, spec.tol_rho)


def certify_cell(spec: CellSpec, do_recheck: bool = True) -> Certificate:
    """Run one certification cell: fixed-point audit, bisection, optional grid
    refinement, and the independent feasibility re-check."""
    dom, sched, sys, grid = spec.build()
    fp = check_fixed_point(sys, grid)
    if not fp.ok:
        raise CertificationError(
            f"{spec.algorithm}: no uniform fixed point "
            f"(residuals {fp.residual_A:.2e}/{fp.residual_C:.2e}, "
            f"kernel_ok={fp.kernel_ok})"
        )

    cert = _bisect_for_grid(spec, sched, sys, grid)
    n_nodes = spec.n_nodes
    refinements = 0
    if spec.refine and cert.feasible and float(dom.hi[0]) > float(dom.lo[0]):
        for _ in range(3):
            n_nodes = 2 * n_nodes - 1
            n_delta = 2 if spec.lyap_degree <= 1 else 3
            fine = build_consistent_grid(dom, n_nodes, n_delta)
            nxt = _bisect_for_grid(spec, sched, sys, fine)
            refinements += 1
            moved = (not nxt.feasible) or abs(nxt.rho - cert.rho) >= spec.tol_rho
            cert = nxt
            grid = fine
            if not moved:
                break

    cert.algorithm = spec.algorithm
    cert.kappa = spec.kappa
    cert.nu_fraction = spec.nu_fraction
    cert.m_value = spec.m_value
    cert.cell = spec.to_dict()
    cert.grid_meta["n_nodes"] = n_nodes
    cert.grid_meta["refinements"] = refinements

    if cert.feasible and do_recheck:
        basis = lyap_basis_of_degree(spec.lyap_degree)
        if spec.theorem == "pointwise":
            problem, meta = assemble_pointwise(sys, sched, grid, cert.rho, basis)
        else:
            plant = augment_variational(sys, sched, cert.rho)
            problem, meta = assemble_variational(
                plant, sched, grid, cert.rho, basis, spec.objective_weights
            )
        ok, sol = _solve_certified(problem, meta)
        if not ok:
            raise CertificationError(
                f"re-solve at certified rate failed: "
                f"{sol.status} ({sol.solver_status})"
            )
        # The certificate must describe the exact solution the independent
        # re-check validates, so rebuild it from the re-solved point.
        fresh = _certificate_from_solution(meta, sol.x, cert.rho, True)
        for f in (
            "P_coeffs", "lambda_p", "lambda_q", "lambda_sector",
            "gamma_xi", "gamma_delta", "t_cond", "margin",
            "c", "c1", "c2", "lam_min", "lam_max", "gamma_f",
            "lyap_basis_names",
        ):
            setattr(cert, f, getattr(fresh, f))
        off_tol = (
            _OFFGRID_RECHECK_REL_TIGHT
            if spec.objective_weights is not None
            else _OFFGRID_RECHECK_REL
        )
        report = recheck_certificate(meta, sol.x, offgrid_rel_tol=off_tol)
        if not report.ok:
            raise CertificationError(
                "independent LMI re-check failed: "
                f"grid {report.max_violation_grid:.2e}, "
                f"off-grid {report.max_rel_violation_offgrid:.2e}"
            )
    return cert


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_CSV_HEADER = (
    "algorithm,theorem,kappa,nu_fraction,rho,feasible,"
    "gamma_xi,gamma_delta,lambda_p_sum,t_cond"
)


def _run_cell_worker(d: dict) -> dict:
    spec = CellSpec.from_dict(d)
    try:
        cert = certify_cell(spec)
        return {"cell": d, "cert": cert, "error": None}
    except Exception as exc:  # recorded, sweep continues
        return {"cell": d, "cert": None, "error": f"{type(exc).__name__}: {exc}"}


def sweep(spec: dict, jobs: int = 1):
    """Run a (kappa, nu_fraction) product of certification cells.

    ``spec`` needs ``algorithm``, ``theorem``, ``kappa_list`` and
    ``nu_fraction_list``; optional keys mirror :class:`CellSpec`.  Returns
    ``(rows, certs, errors)`` where rows follow the sweep CSV schema,
    ``certs`` maps (kappa, nu_fraction) to feasible/infeasible certificates,
    and errors maps the same keys to failure messages.
    """
    base = {
        k: spec[k]
        for k in (
            "m_value",
            "theta_lo_frac",
            "n_nodes",
            "lyap_degree",
            "tol_rho",
            "refine",
            "objective_weights",
            "rho_lo",
            "rho_hi",
        )
        if k in spec
    }
    cells = [
        CellSpec(
            algorithm=spec["algorithm"],
            theorem=spec["theorem"],
            kappa=float(k),
            nu_fraction=float(f),
            **base,
        ).to_dict()
        for k in spec["kappa_list"]
        for f in spec["nu_fraction_list"]
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_worker, cells))
    else:
        results = [_run_cell_worker(c) for c in cells]

    rows, certs, errors = [], {}, {}
    for res in results:
        c = res["cell"]
        key = (c["kappa"], c["nu_fraction"])
        cert = res["cert"]
        if cert is None:
            errors[key] = res["error"]
            rows.append(
                {
                    "algorithm": c["algorithm"],
                    "theorem": c["theorem"],
                    "kappa": c["kappa"],
                    "nu_fraction": c["nu_fraction"],
                    "rho": None,
                    "feasible": False,
                    "gamma_xi": None,
                    "gamma_delta": None,
                    "lambda_p_sum": None,
                    "t_cond": None,
                }
            )
            continue
        certs[key] = cert
        rows.append(
            {
                "algorithm": cert.algorithm,
                "theorem": cert.theorem,
                "kappa": cert.kappa,
                "nu_fraction": cert.nu_fraction,
                "rho": cert.rho if cert.feasible else None,
                "feasible": cert.feasible,
                "gamma_xi": cert.gamma_xi,
                "gamma_delta": cert.gamma_delta,
                "lambda_p_sum": cert.lambda_p_sum if cert.feasible else None,
                "t_cond": cert.t_cond,
            }
        )
    return rows, certs, errors


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_CSV_HEADER.split(","))
    for r in rows:
        writer.writerow([_fmt(r[k]) for k in SWEEP_CSV_HEADER.split(",")])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Certificate serialization (flat key-value JSON, svec-encoded P blocks)
# ---------------------------------------------------------------------------

def certificate_to_json(cert: Certificate) -> str:
    doc: dict = {
        "format": "ratecert-certificate-1",
        "theorem": cert.theorem,
        "algorithm": cert.algorithm,
        "rho": cert.rho,
        "feasible": cert.feasible,
        "kappa": cert.kappa,
        "nu_fraction": cert.nu_fraction,
        "m_value": cert.m_value,
        "theta_lo": cert.theta_lo,
        "theta_hi": cert.theta_hi,
        "delta_lo": cert.delta_lo,
        "delta_hi": cert.delta_hi,
        "lyap_basis": ";".join(cert.lyap_basis_names),
        "lambda_p": list(map(float, cert.lambda_p)),
        "lambda_q": list(map(float, cert.lambda_q)),
        "gamma_xi": cert.gamma_xi,
        "gamma_delta": cert.gamma_delta,
        "t_cond": cert.t_cond,
        "c": cert.c,
        "c1": cert.c1,
        "c2": cert.c2,
        "lam_min": cert.lam_min,
        "lam_max": cert.lam_max,
        "n_solves": cert.n_solves,
    }
    if cert.lambda_sector is not None:
        doc["lambda_sector"] = list(map(float, cert.lambda_sector))
    if cert.gamma_f is not None:
        doc["gamma_f"] = list(map(float, cert.gamma_f))
    for i, Pi in enumerate(cert.P_coeffs):
        doc[f"P_svec_{i}"] = list(map(float, svec(Pi)))
    for k, v in cert.grid_meta.items():
        doc[f"grid_{k}"] = v
    for k, v in cert.cell.items():
        doc[f"cell_{k}"] = v
    return json.dumps(doc, indent=1, sort_keys=True)


def certificate_from_json(text: str) -> Certificate:
    doc = json.loads(text)
    if doc.get("format") != "ratecert-certificate-1":
        raise ValueError("unrecognized certificate document")
    names = tuple(s for s in doc["lyap_basis"].split(";") if s)
    P = []
    i = 0
    while f"P_svec_{i}" in doc:
        P.append(smat(np.array(doc[f"P_svec_{i}"], dtype=float)))
        i += 1
    cert = Certificate(
        theorem=doc["theorem"],
        rho=float(doc["rho"]),
        feasible=bool(doc["feasible"]),
        algorithm=doc.get("algorithm", ""),
        kappa=float(doc.get("kappa", float("nan"))),
        nu_fraction=doc.get("nu_fraction"),
        m_value=float(doc.get("m_value", 1.0)),
        theta_lo=float(doc.get("theta_lo", float("nan"))),
        theta_hi=float(doc.get("theta_hi", float("nan"))),
        delta_lo=float(doc.get("delta_lo", 0.0)),
        delta_hi=float(doc.get("delta_hi", 0.0)),
        lyap_basis_names=names,
        P_coeffs=tuple(P),
        lambda_p=np.array(doc.get("lambda_p", []), dtype=float),
        lambda_q=np.array(doc.get("lambda_q", []), dtype=float),
        lambda_sector=(
            np.array(doc["lambda_sector"], dtype=float)
            if "lambda_sector" in doc
            else None
        ),
        gamma_xi=doc.get("gamma_xi"),
        gamma_delta=doc.get("gamma_delta"),
        t_cond=doc.get("t_cond"),
        c=doc.get("c"),
        c1=doc.get("c1"),
        c2=doc.get("c2"),
        lam_min=doc.get("lam_min"),
        lam_max=doc.get("lam_max"),
        gamma_f=(
            np.array(doc["gamma_f"], dtype=float) if "gamma_f" in doc else None
        ),
        n_solves=int(doc.get("n_solves", 0)),
    )
    cert.grid_meta = {
        k[5:]: v for k, v in doc.items() if k.startswith("grid_")
    }
    cert.cell = {k[5:]: v for k, v in doc.items() if k.startswith("cell_")}
    return cert
