"""Simulator: exact closed-loop behavior, bound envelopes, export."""

import math

import numpy as np
import pytest

from ratecert.algorithms import SectorSchedule, make_gd, make_multistep_gd, make_nesterov
from ratecert.certify import CellSpec, Certificate, certify_cell
from ratecert.lpv import ParamDomain
from ratecert.simulate import (
    BoxSet,
    TRAJECTORY_CSV_HEADER,
    asymptotic_radius,
    check_bound_pointwise,
    check_bound_variational,
    make_varying_quadratic,
    simulate,
    simulate_batch,
    trajectory_to_csv,
    variational_rhs,
)

SCHED = SectorSchedule.affine_in_theta()


@pytest.fixture(scope="module")
def gd_pw_cert():
    return certify_cell(CellSpec("gd", "pointwise", 10.0, nu_fraction=0.05))


@pytest.fixture(scope="module")
def gd_var_cert():
    return certify_cell(CellSpec("gd", "variational", 10.0, nu_fraction=0.05))


def _domain(kappa=10.0, frac=0.05):
    nu = frac * kappa / 5.0
    return ParamDomain([0.8 * kappa], [kappa], [-nu], [nu])


# ---------------------------------------------------------------------------
# Problem generator
# ---------------------------------------------------------------------------

def test_constant_path_is_static():
    dom = _domain(frac=0.0)
    prob = make_varying_quadratic(dom, SCHED, horizon=50, theta_path_kind="constant")
    assert np.all(prob.thetas == prob.thetas[0] )
    assert prob.thetas[0] == dom.hi[0]


def test_paths_admissible_all_kinds_and_seeds():
    dom = _domain(kappa=25.0, frac=0.7)
    nu = float(dom.delta_hi[0])
    for kind in ("sinusoid", "random_walk", "constant"):
        for seed in range(5):
            prob = make_varying_quadratic(
                dom, SCHED, horizon=200, seed=seed, theta_path_kind=kind
            )
            th = prob.thetas
            assert th.min() >= dom.lo[0] - 1e-12
            assert th.max() <= dom.hi[0] + 1e-12
            steps = np.abs(np.diff(th))
            assert steps.max() <= nu + 1e-12


def test_random_walk_deterministic_per_seed():
    dom = _domain()
    a = make_varying_quadratic(dom, SCHED, horizon=100, seed=3,
                               theta_path_kind="random_walk")
    b = make_varying_quadratic(dom, SCHED, horizon=100, seed=3,
                               theta_path_kind="random_walk")
    assert np.array_equal(a.thetas, b.thetas)
    assert np.array_equal(a.z, b.z)


def test_curvature_spans_sector_endpoints():
    dom = _domain()
    prob3 = make_varying_quadratic(dom, SCHED, d=3, horizon=5)
    H = prob3.H_diag(0)
    th = np.array([prob3.thetas[0]])
    assert H[0] == pytest.approx(SCHED.m_at(th))
    assert H[-1] == pytest.approx(SCHED.L_at(th))
    prob1 = make_varying_quadratic(dom, SCHED, d=1, horizon=5)
    assert prob1.H_diag(0)[0] == pytest.approx(SCHED.L_at([prob1.thetas[0]]))


def test_box_projection_shifts_constrained_minimizer():
    dom = _domain(frac=0.0)
    box = BoxSet([0.25], [5.0])
    prob = make_varying_quadratic(dom, SCHED, horizon=20, box=box)
    for k in range(prob.horizon):
        xs = prob.xstar(k)
        assert xs[0] >= 0.25 - 1e-15
        assert prob.fstar(k) >= 0.0


# ---------------------------------------------------------------------------
# Closed-loop exactness
# ---------------------------------------------------------------------------

def test_gd_static_geometric_decay():
    # scalar quadratic with curvature L: GD with step 2/(m+L) contracts the
    # error by exactly (L-m)/(L+m) per step
    kappa = 10.0
    dom = ParamDomain([kappa], [kappa], [0.0], [0.0])
    prob = make_varying_quadratic(dom, SCHED, horizon=40,
                                  theta_path_kind="constant", z_amplitude=0.0)
    sys = make_gd(SCHED)
    traj = simulate(sys, prob, xi0=np.array([prob.z[0, 0] + 3.0]))
    rate = (kappa - 1.0) / (kappa + 1.0)
    want = 3.0 * rate ** np.arange(41)
    assert np.allclose(traj.err, want, rtol=1e-12, atol=1e-12)


def test_fixed_point_start_stays_at_zero_error():
    dom = _domain(frac=0.0)
    prob = make_varying_quadratic(dom, SCHED, horizon=30,
                                  theta_path_kind="constant", z_amplitude=0.0)
    sys = make_nesterov(SCHED)
    traj = simulate(sys, prob, xi0=np.kron(np.ones(2), prob.z[0]))
    assert traj.err.max() <= 1e-12
    assert traj.err_xi.max() <= 1e-12


def test_fixed_point_consistency_along_run():
    dom = _domain()
    prob = make_varying_quadratic(dom, SCHED, horizon=60, seed=4)
    sys = make_nesterov(SCHED)
    traj = simulate(sys, prob)
    for k in range(prob.horizon):
        A = np.kron(sys.A([prob.thetas[k]]), np.eye(prob.d))
        assert np.abs(traj.xistar[k] - A @ traj.xistar[k]).max() <= 1e-10


def test_multistep_round_equals_two_plain_gd_steps():
    dom = _domain()
    prob = make_varying_quadratic(dom, SCHED, horizon=40, seed=9)
    two = make_multistep_gd(SCHED, 2)
    traj = simulate(two, prob, xi0=np.array([2.5]))
    x = np.array([2.5])
    m_fn, L_fn = SCHED.m_fn(), SCHED.L_fn()
    for k in range(prob.horizon):
        th = np.array([prob.thetas[k]])
        alpha = 2.0 / (m_fn(th) + L_fn(th))
        for _ in range(2):
            x = x - alpha * prob.grad(k, x)
        assert np.abs(traj.x[k + 1] - x).max() <= 1e-12


def test_gradient_increment_recorded_consistently():
    dom = _domain()
    prob = make_varying_quadratic(dom, SCHED, horizon=50, seed=6,
                                  theta_path_kind="random_walk")
    sys = make_gd(SCHED)
    traj = simulate(sys, prob)
    for k in range(prob.horizon):
        for i in range(sys.p):
            direct = prob.grad(k, traj.y[k, i]) - prob.grad(k + 1, traj.y[k, i])
            assert np.abs(traj.ddelta[k, i] - direct).max() <= 1e-12


def test_batch_matches_single_runs():
    dom = _domain()
    sys = make_gd(SCHED)
    probs = [
        make_varying_quadratic(dom, SCHED, horizon=25, seed=s) for s in range(3)
    ]
    batch = simulate_batch(sys, probs, xi0=np.array([1.0]))
    for b, prob in enumerate(probs):
        single = simulate(sys, prob, xi0=np.array([1.0]))
        assert np.array_equal(batch.err_xi[b], single.err_xi)
        assert np.array_equal(batch.ddelta[b], single.ddelta)
        assert np.array_equal(batch.fhat_same[b], single.fhat_same)
        assert np.array_equal(batch.fhat_next[b], single.fhat_next)


# ---------------------------------------------------------------------------
# Bound envelopes
# ---------------------------------------------------------------------------

def test_pointwise_bound_static_reduces_to_geometric_envelope():
    spec = CellSpec("gd", "pointwise", 10.0, nu_fraction=0.0, theta_lo_frac=1.0)
    cert = certify_cell(spec)
    dom = cert.domain()
    prob = make_varying_quadratic(dom, SCHED, horizon=60,
                                  theta_path_kind="constant", z_amplitude=0.0)
    traj = simulate(make_gd(SCHED), prob, xi0=np.array([4.0]))
    chk = check_bound_pointwise(cert, traj)
    assert chk.ok
    want = cert.c * cert.rho ** np.arange(61) * traj.err_xi[0]
    assert np.allclose(chk.rhs, want, rtol=1e-12)


def test_pointwise_bound_holds_on_varying_runs(gd_pw_cert):
    cert = gd_pw_cert
    dom = cert.domain()
    for seed in range(5):
        for kind in ("sinusoid", "random_walk"):
            prob = make_varying_quadratic(dom, SCHED, horizon=300, seed=seed,
                                          theta_path_kind=kind)
            traj = simulate(make_gd(SCHED), prob, xi0=np.array([2.0]))
            chk = check_bound_pointwise(cert, traj)
            assert chk.ok, f"seed={seed} kind={kind} ratio={chk.max_ratio}"


def test_variational_bound_holds_on_varying_runs(gd_var_cert):
    cert = gd_var_cert
    dom = cert.domain()
    for seed in range(5):
        prob = make_varying_quadratic(dom, SCHED, horizon=300, seed=seed)
        traj = simulate(make_gd(SCHED), prob, xi0=np.array([2.0]))
        chk = check_bound_variational(cert, traj)
        assert chk.ok, f"seed={seed} ratio={chk.max_ratio}"


def test_bound_check_rejects_mismatched_certificate(gd_pw_cert):
    dom = gd_pw_cert.domain()
    prob = make_varying_quadratic(dom, SCHED, horizon=10)
    traj = simulate(make_gd(SCHED), prob)
    with pytest.raises(ValueError):
        check_bound_variational(gd_pw_cert, traj)


def test_out_of_spec_path_reports_without_raising(gd_pw_cert):
    # a 3x-too-fast parameter path is outside the certificate's domain; the
    # check still runs and reports, it is not an error
    cert = gd_pw_cert
    fast = ParamDomain([cert.theta_lo], [cert.theta_hi],
                       [3.0 * cert.delta_lo], [3.0 * cert.delta_hi])
    prob = make_varying_quadratic(fast, SCHED, horizon=100, seed=1,
                                  theta_path_kind="random_walk")
    traj = simulate(make_gd(SCHED), prob, xi0=np.array([2.0]))
    chk = check_bound_pointwise(cert, traj)
    assert chk.ok in (True, False)


def test_corollary_form_matches_theorem_form_for_constant_sector(gd_var_cert):
    # with theta frozen the sector gap is constant and the per-channel
    # function-variation prices substitute exactly into the theorem's
    # discounted sum
    cert = gd_var_cert
    dom = cert.domain()
    prob = make_varying_quadratic(dom, SCHED, horizon=80,
                                  theta_path_kind="constant", seed=2)
    traj = simulate(make_gd(SCHED), prob, xi0=np.array([1.5]))
    rhs = variational_rhs(cert, traj)

    rho2 = cert.rho ** 2
    gap = float(_constant_gap(cert, prob))
    e0 = traj.err_xi[0]
    N = len(traj.err_xi) - 1
    dd2 = np.sum(traj.ddelta ** 2, axis=(-2, -1))
    dxi2 = traj.dxistar_norm ** 2
    gamma_f = cert.gamma_f  # = lambda_p * rho^2 * gap at the frozen theta
    want = np.zeros(N + 1)
    want[0] = cert.c1 * e0 ** 2
    D = 0.0
    G = 0.0
    for k in range(1, N + 1):
        D = rho2 * D + cert.gamma_xi * dxi2[k - 1] + cert.gamma_delta * dd2[k - 1]
        if k >= 2:
            g_inc = float(
                gamma_f @ (traj.fhat_next[k - 2] - traj.fhat_same[k - 2])
            ) / rho2 * 1.0
            G = rho2 * (G + g_inc)
        want[k] = cert.c1 * rho2 ** k * e0 ** 2 + cert.c2 * D + cert.c2 * G
    assert np.allclose(rhs, want, rtol=0, atol=1e-10 * max(1.0, np.abs(want).max()))


def _constant_gap(cert, prob):
    sched = cert.sector()
    th = np.array([prob.thetas[0]])
    return sched.L_at(th) - sched.m_at(th)


# ---------------------------------------------------------------------------
# Asymptotic radius
# ---------------------------------------------------------------------------

def _radius_cert(theorem):
    cert = Certificate(
        theorem=theorem, rho=0.9, feasible=True, theta_lo=8.0, theta_hi=10.0,
        lyap_basis_names=("1",), P_coeffs=(np.eye(2),),
        lambda_p=np.array([0.5]),
    )
    cert.c = 2.0
    cert.c1 = 4.0
    cert.c2 = 0.25
    cert.gamma_xi = 9.0
    cert.gamma_delta = 1.0
    cert.gamma_f = np.array([0.0])
    return cert


def test_radius_zero_when_static():
    assert asymptotic_radius(_radius_cert("pointwise"), 0.0) == 0.0
    assert asymptotic_radius(_radius_cert("variational"), 0.0) == 0.0


def test_radius_closed_forms():
    pw = _radius_cert("pointwise")
    assert asymptotic_radius(pw, 0.5) == pytest.approx(2.0 * 0.5 / 0.1)
    var = _radius_cert("variational")
    want = math.sqrt(0.25 * 9.0 * 0.5 ** 2 / (1.0 - 0.81))
    assert asymptotic_radius(var, 0.5) == pytest.approx(want)
    # linear homogeneity in sigma_xi when the other terms vanish
    assert asymptotic_radius(var, 1.0) == pytest.approx(2 * asymptotic_radius(var, 0.5))


def test_radius_guards():
    bad = _radius_cert("pointwise")
    bad.rho = 1.0
    assert asymptotic_radius(bad, 1.0) == float("inf")
    nope = _radius_cert("pointwise")
    nope.feasible = False
    with pytest.raises(ValueError):
        asymptotic_radius(nope, 1.0)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def test_trajectory_csv_schema_and_determinism(gd_pw_cert):
    dom = gd_pw_cert.domain()
    prob = make_varying_quadratic(dom, SCHED, horizon=10, seed=5)
    traj = simulate(make_gd(SCHED), prob)
    text = trajectory_to_csv(traj, gd_pw_cert)
    lines = text.splitlines()
    assert lines[0] == TRAJECTORY_CSV_HEADER
    assert len(lines) == 12  # header + N+1 rows
    assert text == trajectory_to_csv(traj, gd_pw_cert)
    bare = trajectory_to_csv(traj)
    assert bare.splitlines()[1].endswith(",")  # bound column blank
