"""Constraint filters: multiplier structure, two-route agreement, soundness."""

import numpy as np
import pytest

from ratecert.algorithms import SectorSchedule
from ratecert.iqc import (
    M_SECTOR,
    discounted_quadratic_sum,
    filter_outputs_analytic,
    make_passivity_iqc,
    make_sector_iqc,
    make_variational_iqc,
    run_filter,
    variational_lower_bound,
    variational_multiplier,
)

from _oracles import augmentation_deviation, variational_inequality_trials

SCHED = SectorSchedule.affine_in_theta(1.0)


def test_sector_multiplier_frozen():
    assert np.allclose(M_SECTOR, [[0.0, 1.0], [1.0, 0.0]])


def test_variational_multiplier_frozen():
    M = variational_multiplier()
    want = np.zeros((6, 6))
    want[0, 1] = want[1, 0] = 0.5
    want[2, 2] = 1.0
    want[3, 3] = -1.0
    want[4, 4] = 0.5
    want[5, 5] = -0.5
    assert np.allclose(M, want)
    assert np.allclose(M, M.T)


def test_sector_filter_quadratic_nonnegative_for_in_sector_gradients():
    filt = make_sector_iqc(SCHED)
    assert filt.n_zeta == 0 and filt.n_rows == 2 and filt.rhs_kind == "zero"
    rng = np.random.default_rng(2)
    for _ in range(200):
        th = rng.uniform(1.5, 20.0, size=(1, 1))
        L = float(th[0, 0])
        h = rng.uniform(1.0, L)       # in-sector slope
        y = rng.normal(0, 3)
        u = h * y
        psi = run_filter(filt, {"y": np.array([y]), "u": np.array([u])}, th)
        val = float(psi[0] @ M_SECTOR @ psi[0])
        assert val >= -1e-12
        # out-of-sector slope violates it
        u_bad = (L + 1.0) * y
        psi_bad = run_filter(filt, {"y": np.array([y]), "u": np.array([u_bad])}, th)
        if abs(y) > 1e-6:
            assert float(psi_bad[0] @ M_SECTOR @ psi_bad[0]) < 0


def test_passivity_filter_is_identity_stack():
    filt = make_passivity_iqc()
    th = np.array([[2.0]])
    psi = run_filter(filt, {"y": np.array([1.5]), "u": np.array([-0.5])}, th)
    assert np.allclose(psi, [[1.5, -0.5]])
    # monotone pair has nonnegative product under the swap multiplier
    assert float(psi[0] @ M_SECTOR @ psi[0]) == pytest.approx(2 * 1.5 * -0.5)


def test_variational_filter_shapes_and_signature():
    filt = make_variational_iqc(SCHED, rho=0.9)
    assert filt.n_zeta == 4 and filt.n_rows == 6
    assert filt.rhs_kind == "offby1"
    assert filt.input_signature == ("y", "u", "dxstar", "ddelta")
    with pytest.raises(ValueError):
        make_variational_iqc(SCHED, rho=0.0)


def test_discounted_quadratic_sum_manual_window():
    psi = np.array([[1.0, 2.0], [3.0, 4.0]])
    M = np.eye(2)
    rho = 0.5
    # rho^2 * (1+4) + 1 * (9+16)
    assert discounted_quadratic_sum(psi, M, rho) == pytest.approx(0.25 * 5 + 25)


def test_variational_lower_bound_empty_window_is_zero():
    assert variational_lower_bound([], [], [], [], 0.9) == 0.0


def test_filter_state_space_matches_analytic_formulas():
    # two independent routes to the same outputs must agree to near machine
    # precision over random (not necessarily admissible) windows
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        N = int(rng.integers(2, 9))
        rho = float(rng.uniform(0.1, 1.0))
        th = rng.uniform(1.5, 25.0, size=(N, 1))
        inputs = {
            "y": rng.normal(size=N),
            "u": rng.normal(size=N),
            "dxstar": rng.normal(size=N),
            "ddelta": rng.normal(size=N),
        }
        filt = make_variational_iqc(SCHED, rho)
        psi = run_filter(filt, inputs, th)
        psi2 = filter_outputs_analytic(dict(inputs, theta=th), SCHED, rho)
        worst = max(worst, float(np.abs(psi - psi2).max()))
    assert worst <= 1e-10


def test_variational_inequality_holds_on_synthetic_scenarios():
    # scenario-level soundness: discounted quadratic sum dominates the
    # telescoping function-variation bound on real quadratic families
    min_slack, max_route = variational_inequality_trials(
        n_trials=1000, horizon_hi=50, seed=7
    )
    assert min_slack >= -1e-9
    assert max_route <= 1e-10


def test_augmented_plant_reproduces_filter_outputs_single_channel():
    dev = augmentation_deviation("gd", kappa=10.0, rho=0.9, seed=11)
    assert dev <= 1e-10


def test_augmented_plant_reproduces_filter_outputs_two_channels():
    dev = augmentation_deviation("gd-m2", kappa=100.0, rho=0.98, seed=11)
    assert dev <= 1e-10
