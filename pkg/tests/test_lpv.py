"""Parameter-varying plant layer: matrix functions, domains, grids."""

import numpy as np
import pytest

from ratecert.algorithms import SectorSchedule, make_accelerated_ogd, make_gd, make_nesterov
from ratecert.lpv import (
    MatrixFn,
    ParamDomain,
    build_consistent_grid,
    check_causality,
    check_fixed_point,
    coord,
    eval_system,
)


def _rand_theta(rng, n=1):
    return rng.uniform(0.5, 5.0, size=n)


# ---------------------------------------------------------------------------
# MatrixFn algebra
# ---------------------------------------------------------------------------

def test_matrixfn_constant_and_eye():
    F = np.array([[1.0, 2.0], [3.0, 4.0]])
    mf = MatrixFn.constant(F)
    assert np.allclose(mf(np.array([7.0])), F)
    assert np.allclose(MatrixFn.eye(3)(np.array([0.1])), np.eye(3))
    assert np.allclose(MatrixFn.zeros(2, 3)(np.array([0.1])), np.zeros((2, 3)))


def test_matrixfn_affine_matches_manual():
    F0, F1 = np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]])
    mf = MatrixFn.affine(F0, F1)
    for t in (0.0, 0.5, 3.0):
        assert np.allclose(mf(np.array([t])), F0 + t * F1)


def test_matrixfn_algebra_against_numeric_trials():
    rng = np.random.default_rng(5)
    c = coord(0)
    A = MatrixFn([c], [np.array([[1.0, 2.0], [0.0, 1.0]])])
    B = MatrixFn.affine(np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]]))
    for _ in range(50):
        th = _rand_theta(rng)
        assert np.allclose((A + B)(th), A(th) + B(th), atol=1e-13)
        assert np.allclose((A - B)(th), A(th) - B(th), atol=1e-13)
        assert np.allclose(A.scale(2.5)(th), 2.5 * A(th), atol=1e-13)
        assert np.allclose((A @ B)(th), A(th) @ B(th), atol=1e-12)


def test_matrixfn_block_and_stack():
    rng = np.random.default_rng(9)
    A = MatrixFn.affine(np.eye(2), np.ones((2, 2)))
    B = MatrixFn.constant(np.array([[5.0], [6.0]]))
    blk = MatrixFn.block([[A, B], [None, MatrixFn.eye(1)]])
    h = MatrixFn.hstack([A, B])
    for _ in range(20):
        th = _rand_theta(rng)
        top = np.hstack([A(th), B(th)])
        want = np.vstack([top, np.array([[0.0, 0.0, 1.0]])])
        assert np.allclose(blk(th), want, atol=1e-13)
        assert np.allclose(h(th), top, atol=1e-13)
        assert np.allclose(A.row(1)(th), A(th)[1:2, :], atol=1e-13)


def test_matrixfn_eval_batch_matches_loop():
    rng = np.random.default_rng(1)
    A = MatrixFn.affine(np.eye(2), np.array([[0.0, 1.0], [0.0, 0.0]]))
    thetas = rng.uniform(0.5, 5.0, size=(40, 1))
    batch = A.eval_batch(thetas)
    for k in range(thetas.shape[0]):
        assert np.allclose(batch[k], A(thetas[k]), atol=1e-14)


# ---------------------------------------------------------------------------
# Parameter domain
# ---------------------------------------------------------------------------

def test_domain_validation():
    with pytest.raises(ValueError):
        ParamDomain([2.0], [1.0], [0.0], [0.0])
    with pytest.raises(ValueError):
        ParamDomain([1.0], [2.0], [0.5], [-0.5])


def test_domain_contains_and_static():
    dom = ParamDomain([1.0], [2.0], [-0.1], [0.1])
    assert dom.contains(np.array([1.5]))
    assert not dom.contains(np.array([2.5]))
    assert not dom.is_static
    assert ParamDomain([1.0], [1.0], [0.0], [0.0]).is_static


def test_admissible_delta_clips_at_box_edges():
    dom = ParamDomain([1.0], [2.0], [-0.3], [0.3])
    lo, hi = dom.admissible_delta_interval(np.array([1.9]))
    assert np.allclose(lo, [-0.3]) and np.allclose(hi, [0.1])
    lo, hi = dom.admissible_delta_interval(np.array([1.0]))
    assert np.allclose(lo, [0.0]) and np.allclose(hi, [0.3])


# ---------------------------------------------------------------------------
# Consistent grid
# ---------------------------------------------------------------------------

def test_grid_nodes_and_pairs_are_admissible():
    dom = ParamDomain([8.0], [10.0], [-0.5], [0.5])
    grid = build_consistent_grid(dom, n_nodes=11, n_delta=2)
    assert len(grid.thetas) == 11
    assert np.allclose(np.array(grid.thetas).ravel(), np.linspace(8, 10, 11))
    count = 0
    for th, dl in grid.iter_pairs():
        count += 1
        assert dom.contains(th)
        assert dom.contains(th + dl)
        assert (dl >= dom.delta_lo - 1e-15).all()
        assert (dl <= dom.delta_hi + 1e-15).all()
    assert count == grid.n_pairs


def test_grid_static_domain_collapses():
    dom = ParamDomain([3.0], [3.0], [0.0], [0.0])
    grid = build_consistent_grid(dom, n_nodes=11)
    assert len(grid.thetas) == 1
    pairs = list(grid.iter_pairs())
    assert len(pairs) == 1
    th, dl = pairs[0]
    assert np.allclose(th, [3.0]) and np.allclose(dl, [0.0])


def test_grid_midpoint_option_adds_interior_delta():
    dom = ParamDomain([1.0], [2.0], [-0.2], [0.2])
    g2 = build_consistent_grid(dom, n_nodes=3, n_delta=2)
    g3 = build_consistent_grid(dom, n_nodes=3, n_delta=3)
    assert g3.n_pairs > g2.n_pairs
    # the interior node's midpoint increment is 0
    mid_deltas = [dl for th, dl in g3.iter_pairs() if np.isclose(th[0], 1.5)]
    assert any(np.isclose(d[0], 0.0) for d in mid_deltas)


def test_grid_rejects_bad_node_count():
    dom = ParamDomain([1.0], [2.0], [0.0], [0.0])
    with pytest.raises(ValueError):
        build_consistent_grid(dom, n_nodes=0)


# ---------------------------------------------------------------------------
# Plant structure checks
# ---------------------------------------------------------------------------

def _gd_setup(lo=8.0, hi=10.0, nu=0.5):
    sched = SectorSchedule.affine_in_theta()
    dom = ParamDomain([lo], [hi], [-nu], [nu])
    grid = build_consistent_grid(dom, n_nodes=11)
    return sched, dom, grid


def test_eval_system_returns_consistent_shapes():
    sched, dom, grid = _gd_setup()
    sys = make_gd(sched)
    A, B, C, D = eval_system(sys, np.array([9.0]))
    assert A.shape == (1, 1) and B.shape == (1, 1)
    assert C.shape == (1, 1) and D.shape == (1, 1)


def test_causality_accepts_catalog_plants():
    sched, dom, grid = _gd_setup()
    assert check_causality(make_gd(sched), grid.thetas)
    assert check_causality(make_nesterov(sched), grid.thetas)
    aogd = make_accelerated_ogd(sched, tau=0.25, alpha=0.5, gamma=0.5)
    assert check_causality(aogd, grid.thetas)


def test_causality_rejects_instantaneous_gradient_loop():
    sched, dom, grid = _gd_setup()
    base = make_gd(sched)
    from ratecert.lpv import LpvSystem

    bad = LpvSystem(
        A=base.A, B=base.B, C=base.C,
        D=MatrixFn.constant([[0.5]]),
        n_xi=1, p=1, q=0,
    )
    assert not check_causality(bad, grid.thetas)


def test_fixed_point_gd_and_nesterov():
    sched, dom, grid = _gd_setup()
    rep = check_fixed_point(make_gd(sched), grid)
    assert rep.ok
    assert np.allclose(rep.U, [[1.0]], atol=1e-9)
    rep2 = check_fixed_point(make_nesterov(sched), grid)
    assert rep2.ok
    assert np.allclose(rep2.U, [[1.0], [1.0]], atol=1e-9)


def test_fixed_point_rejects_leaky_state():
    sched, dom, grid = _gd_setup()
    from ratecert.lpv import LpvSystem

    leaky = LpvSystem(
        A=MatrixFn.constant([[0.5]]),
        B=MatrixFn.constant([[-0.1]]),
        C=MatrixFn.constant([[1.0]]),
        D=MatrixFn.constant([[0.0]]),
        n_xi=1, p=1, q=0,
    )
    rep = check_fixed_point(leaky, grid)
    assert not rep.ok
