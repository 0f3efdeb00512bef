"""Independent signal-level oracles shared by the unit and acceptance suites.

Everything here re-derives claimed inequalities from raw synthetic scenarios
(actual quadratic objectives, actual gradients) without going through the
certification pipeline, so a pipeline bug cannot hide from these checks.
"""

import numpy as np

from ratecert.algorithms import SectorSchedule
from ratecert.iqc import (
    augment_variational,
    discounted_quadratic_sum,
    filter_outputs_analytic,
    make_variational_iqc,
    run_filter,
    variational_lower_bound,
    variational_multiplier,
)


def variational_inequality_trials(n_trials=1000, horizon_hi=50, seed=7):
    """Monte-carlo check of the variational constraint on real scenarios.

    Each trial draws an admissible parameter path, a family of in-sector
    quadratics with drifting minimizers, and arbitrary query points; it then
    compares the filter's discounted quadratic sum against the telescoping
    function-variation lower bound, and the state-space filter against the
    analytic formulas.  Returns ``(min_normalized_slack, max_route_dev)``.
    """
    rng = np.random.default_rng(seed)
    sched = SectorSchedule.affine_in_theta(1.0)
    M = variational_multiplier()
    worst = np.inf
    worst_route = 0.0
    for _ in range(n_trials):
        N = int(rng.integers(2, horizon_hi + 1))
        # kappa >= 1.5 keeps L = theta >= 1.2 > m = 1 over the whole box, so
        # the in-sector curvature draw below is well-posed on every path
        kappa = float(rng.uniform(1.5, 30.0))
        lo, hi = 0.8 * kappa, kappa
        nu = kappa / 5.0 * rng.uniform(0, 1)
        rho = float(rng.uniform(0.1, 1.0))
        th = np.empty(N + 1)
        th[0] = rng.uniform(lo, hi)
        for k in range(N):
            a_, b_ = max(-nu, lo - th[k]), min(nu, hi - th[k])
            th[k + 1] = th[k] + rng.uniform(a_, b_)
        L = th.copy()
        m = np.ones(N + 1)
        H = rng.uniform(m, L)            # curvatures inside the sector
        z = rng.normal(0, 2, N + 1)      # minimizers
        x = rng.normal(0, 2, N + 1)      # query points
        u = H * (x - z)                  # gradients (zero at the minimizer)
        y_err = x - z
        dx = z[:-1] - z[1:]              # minimizer increments
        dd = H[:-1] * (x[:-1] - z[:-1]) - H[1:] * (x[:-1] - z[1:])
        dxw = np.concatenate([dx, [0.0]])
        ddw = np.concatenate([dd, [0.0]])
        filt = make_variational_iqc(sched, rho)
        inputs = {"y": y_err, "u": u, "dxstar": dxw, "ddelta": ddw}
        psi = run_filter(filt, inputs, th[:, None])
        psi2 = filter_outputs_analytic(dict(inputs, theta=th[:, None]), sched, rho)
        worst_route = max(worst_route, float(np.abs(psi - psi2).max()))
        lhs = discounted_quadratic_sum(psi, M, rho)
        fhat_prev = 0.5 * H[:-1] * (x[:-1] - z[:-1]) ** 2
        fhat_curr = 0.5 * H[1:] * (x[:-1] - z[1:]) ** 2
        gap_prev = (L - m)[:-1]
        gap_curr = (L - m)[1:]
        rhs = variational_lower_bound(fhat_prev, fhat_curr, gap_prev, gap_curr, rho)
        scale = 1.0 + abs(lhs) + abs(rhs)
        worst = min(worst, (lhs - rhs) / scale)
    return float(worst), float(worst_route)


def augmentation_deviation(algo_id, kappa, rho, seed=11, T=30, nu_fraction=0.05):
    """Drive the augmented plant open-loop with random inputs and compare its
    constraint-channel outputs row-by-row against the analytic filter formulas
    applied to the plant's own input/output signals.  Returns the max
    absolute deviation over all channels (sector and variational rows)."""
    from ratecert.certify import CellSpec

    spec = CellSpec(algo_id, "variational", kappa, nu_fraction=nu_fraction)
    dom, sched, sys, grid = spec.build()
    plant = augment_variational(sys, sched, rho)
    rng = np.random.default_rng(seed)

    ths = rng.uniform(dom.lo[0], dom.hi[0], size=(T, 1))
    u = rng.normal(size=(T, sys.p))
    dxi = rng.normal(size=(T, sys.n_xi))
    ddel = rng.normal(size=(T, sys.p))

    n = sys.n_xi
    eta = np.zeros(plant.n_eta)
    Z = np.zeros((T, 8 * sys.p))
    Y = np.zeros((T, sys.p))
    for k in range(T):
        th = ths[k]
        Z[k] = plant.C_hat(th) @ eta + plant.D_hat(th) @ u[k]
        Y[k] = sys.C(th) @ eta[:n] + sys.D(th) @ u[k]
        eta = (
            plant.A_hat(th) @ eta
            + plant.B_hat(th) @ u[k]
            + plant.B_dxi(th) @ dxi[k]
            + plant.B_ddelta(th) @ ddel[k]
        )

    m_fn, L_fn = sched.m_fn(), sched.L_fn()
    mv = np.array([m_fn(t) for t in ths])
    Lv = np.array([L_fn(t) for t in ths])
    worst = 0.0
    for i in range(sys.p):
        sector_ref = np.stack(
            [Lv * Y[:, i] - u[:, i], u[:, i] - mv * Y[:, i]], axis=1
        )
        worst = max(worst, float(np.abs(Z[:, 8 * i : 8 * i + 2] - sector_ref).max()))
        psi_ref = filter_outputs_analytic(
            {
                "y": Y[:, i],
                "u": u[:, i],
                "dxstar": dxi[:, 0],
                "ddelta": ddel[:, i],
                "theta": ths,
            },
            sched,
            rho,
        )
        worst = max(
            worst, float(np.abs(Z[:, 8 * i + 2 : 8 * i + 8] - psi_ref).max())
        )
    return worst
