"""Command-line interface.

Exit codes: 0 when the requested certification/check succeeds (feasible
certificate, passing bound check, passing audit), 2 when the run completed
but the answer is negative (infeasible, bound violated, audit failed),
1 on errors (unknown algorithm, bad arguments, solver failure).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .algorithms import make_algorithm
from .certify import (
    CellSpec,
    certificate_from_json,
    certificate_to_json,
    certify_cell,
    sweep,
    sweep_rows_to_csv,
    DEFAULT_TOL_RHO,
)
from .lpv import check_fixed_point
from .simulate import (
    check_bound_pointwise,
    check_bound_variational,
    make_varying_quadratic,
    simulate,
    trajectory_to_csv,
)

DEFAULT_NU_FRACTIONS = (0.0, 0.05, 0.5, 1.0)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _cfg(ctx, key, value, default):
    if value is not None:
        return value
    cfg = ctx.obj or {}
    return cfg.get(key, default)


@click.group()
@click.option(
    "--config",
    type=click.Path(dir_okay=False),
    default=None,
    help="JSON file of default option values (flags override it).",
)
@click.pass_context
def main(ctx, config):
    """Convergence-rate certification for time-varying first-order methods."""
    ctx.ensure_object(dict)
    if config is not None:
        try:
            ctx.obj.update(json.loads(Path(config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            _fail(f"cannot read config {config}: {exc}")


def _parse_weights(text):
    if text is None:
        return None
    parts = [float(v) for v in str(text).split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise ValueError("weights must be one value or k1,k2,k3")
    return tuple(parts)


def _cell_from_options(ctx, algo, theorem, kappa, nu_frac, m_value, nodes,
                       degree, tol_rho, refine, weights, rho_lo, rho_hi,
                       theta_lo_frac) -> CellSpec:
    algo = _cfg(ctx, "algo", algo, None)
    kappa = _cfg(ctx, "kappa", kappa, None)
    if algo is None:
        _fail("--algo is required")
    if kappa is None:
        _fail("--kappa is required")
    try:
        w = _parse_weights(_cfg(ctx, "weights", weights, None))
    except ValueError as exc:
        _fail(str(exc))
    return CellSpec(
        algorithm=str(algo),
        theorem=_cfg(ctx, "theorem", theorem, "pointwise"),
        kappa=float(kappa),
        nu_fraction=float(_cfg(ctx, "nu_frac", nu_frac, 0.0)),
        m_value=float(_cfg(ctx, "m_value", m_value, 1.0)),
        theta_lo_frac=float(_cfg(ctx, "theta_lo_frac", theta_lo_frac, 0.8)),
        n_nodes=int(_cfg(ctx, "nodes", nodes, 11)),
        lyap_degree=int(_cfg(ctx, "degree", degree, 1)),
        tol_rho=float(_cfg(ctx, "tol_rho", tol_rho, DEFAULT_TOL_RHO)),
        refine=bool(_cfg(ctx, "refine", refine if refine else None, False)),
        objective_weights=w,
        rho_lo=_cfg(ctx, "rho_lo", rho_lo, None),
        rho_hi=_cfg(ctx, "rho_hi", rho_hi, None),
    )


_shared_options = [
    click.option("--algo", default=None, help="Algorithm id (gd, gd-m<k>, nesterov, tmm, aogd)."),
    click.option("--theorem", default=None, type=click.Choice(["pointwise", "variational"]),
                 help="Certification route."),
    click.option("--m-value", default=None, type=float, help="Strong-convexity modulus (default 1)."),
    click.option("--nodes", default=None, type=int, help="Grid nodes over theta (default 11)."),
    click.option("--degree", default=None, type=int, help="Polynomial degree of P(theta) (default 1)."),
    click.option("--tol-rho", default=None, type=float, help="Rate lattice step (default 2^-12)."),
    click.option("--refine/--no-refine", "refine", default=False, help="Refine the grid until the rate stabilizes."),
    click.option("--weights", default=None, help="k1,k2,k3: minimize conditioning + weighted sensitivities."),
    click.option("--rho-lo", default=None, type=float, help="Lower end of the rate search."),
    click.option("--rho-hi", default=None, type=float, help="Upper end of the rate search."),
    click.option("--theta-lo-frac", default=None, type=float,
                 help="Lower domain endpoint as a fraction of nominal L (default 0.8)."),
]


def _apply(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return deco


@main.command()
@_apply(_shared_options)
@click.option("--kappa", default=None, type=float, help="Condition number L_nominal / m.")
@click.option("--nu-frac", default=None, type=float,
              help="Per-step variation budget as a fraction of its maximum (default 0).")
@click.option("--out", default=None, type=click.Path(dir_okay=False),
              help="Write the certificate as JSON.")
@click.pass_context
def certify(ctx, algo, theorem, m_value, nodes, degree, tol_rho, refine,
            weights, rho_lo, rho_hi, theta_lo_frac, kappa, nu_frac, out):
    """Certify one (algorithm, kappa, variation-budget) cell."""
    spec = _cell_from_options(ctx, algo, theorem, kappa, nu_frac, m_value,
                              nodes, degree, tol_rho, refine, weights,
                              rho_lo, rho_hi, theta_lo_frac)
    try:
        cert = certify_cell(spec)
    except Exception as exc:
        _fail(str(exc))
    out = _cfg(ctx, "out", out, None)
    if out:
        Path(out).write_text(certificate_to_json(cert))
    tag = f"{spec.algorithm} {spec.theorem} kappa={spec.kappa:g} nu_fraction={spec.nu_fraction:g}"
    if cert.feasible:
        click.echo(f"{tag}: feasible, rho={cert.rho!r}")
        if cert.gamma_xi is not None:
            click.echo(
                f"  gamma_xi={cert.gamma_xi:.6g} gamma_delta={cert.gamma_delta:.6g} "
                f"lambda_p_sum={cert.lambda_p_sum:.6g}"
                + (f" t_cond={cert.t_cond:.6g}" if cert.t_cond is not None else "")
            )
        sys.exit(0)
    click.echo(f"{tag}: infeasible up to rho={cert.rho!r}")
    sys.exit(2)


@main.command()
@_apply(_shared_options)
@click.option("--kappas", default=None, help="Comma-separated condition numbers.")
@click.option("--nu-fracs", default=None,
              help="Comma-separated variation-budget fractions (default 0,0.05,0.5,1).")
@click.option("--out-dir", default=None, type=click.Path(file_okay=False),
              help="Directory for one CSV per (algorithm, theorem).")
@click.option("--jobs", default=None, type=int, help="Parallel worker processes (default 1).")
@click.pass_context
def sweep_cmd(ctx, algo, theorem, m_value, nodes, degree, tol_rho, refine,
              weights, rho_lo, rho_hi, theta_lo_frac, kappas, nu_fracs,
              out_dir, jobs):
    """Certify a grid of cells and write the results as CSV."""
    algo = _cfg(ctx, "algo", algo, None)
    if algo is None:
        _fail("--algo is required")
    theorem = _cfg(ctx, "theorem", theorem, "pointwise")
    kappas = _cfg(ctx, "kappas", kappas, None)
    if kappas is None:
        _fail("--kappas is required")
    if isinstance(kappas, str):
        kappa_list = [float(v) for v in kappas.split(",")]
    else:
        kappa_list = [float(v) for v in kappas]
    nu_fracs = _cfg(ctx, "nu_fracs", nu_fracs, None)
    if nu_fracs is None:
        frac_list = list(DEFAULT_NU_FRACTIONS)
    elif isinstance(nu_fracs, str):
        frac_list = [float(v) for v in nu_fracs.split(",")]
    else:
        frac_list = [float(v) for v in nu_fracs]
    try:
        w = _parse_weights(_cfg(ctx, "weights", weights, None))
    except ValueError as exc:
        _fail(str(exc))

    sweep_spec = {
        "algorithm": str(algo),
        "theorem": theorem,
        "kappa_list": kappa_list,
        "nu_fraction_list": frac_list,
        "m_value": float(_cfg(ctx, "m_value", m_value, 1.0)),
        "theta_lo_frac": float(_cfg(ctx, "theta_lo_frac", theta_lo_frac, 0.8)),
        "n_nodes": int(_cfg(ctx, "nodes", nodes, 11)),
        "lyap_degree": int(_cfg(ctx, "degree", degree, 1)),
        "tol_rho": float(_cfg(ctx, "tol_rho", tol_rho, DEFAULT_TOL_RHO)),
        "refine": bool(_cfg(ctx, "refine", refine if refine else None, False)),
        "objective_weights": w,
    }
    rl = _cfg(ctx, "rho_lo", rho_lo, None)
    rh = _cfg(ctx, "rho_hi", rho_hi, None)
    if rl is not None:
        sweep_spec["rho_lo"] = float(rl)
    if rh is not None:
        sweep_spec["rho_hi"] = float(rh)
    rows, _certs, errors = sweep(sweep_spec, jobs=int(_cfg(ctx, "jobs", jobs, 1)))
    out_dir = Path(_cfg(ctx, "out_dir", out_dir, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"sweep_{algo}_{theorem}.csv"
    path.write_text(sweep_rows_to_csv(rows))
    click.echo(f"wrote {path} ({len(rows)} rows)")
    for key, msg in sorted(errors.items()):
        click.echo(f"error at kappa={key[0]:g} nu_fraction={key[1]:g}: {msg}", err=True)
    sys.exit(1 if errors else 0)


@main.command()
@click.option("--cert", "cert_path", default=None, type=click.Path(dir_okay=False),
              help="Certificate JSON produced by `certify --out`.")
@click.option("--seed", default=None, type=int, help="Problem generator seed (default 0).")
@click.option("--horizon", default=None, type=int, help="Steps to simulate (default 500).")
@click.option("--dim", default=None, type=int, help="Problem dimension (default 1).")
@click.option("--path-kind", default=None,
              type=click.Choice(["sinusoid", "random_walk", "constant"]),
              help="Scheduling-parameter path (default sinusoid).")
@click.option("--z-amplitude", default=None, type=float,
              help="Minimizer drift amplitude (default 1).")
@click.option("--x0", default=None, type=float,
              help="Uniform initial state value (default 0).")
@click.option("--out", default=None, type=click.Path(dir_okay=False),
              help="Write the trajectory as CSV.")
@click.pass_context
def simulate_cmd(ctx, cert_path, seed, horizon, dim, path_kind, z_amplitude,
                 x0, out):
    """Simulate a certified cell and check the certified bound empirically."""
    cert_path = _cfg(ctx, "cert", cert_path, None)
    if cert_path is None:
        _fail("--cert is required")
    try:
        cert = certificate_from_json(Path(cert_path).read_text())
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        _fail(f"cannot load certificate: {exc}")
    if not cert.feasible:
        click.echo("certificate is infeasible; nothing to validate")
        sys.exit(2)
    seed = int(_cfg(ctx, "seed", seed, 0))
    horizon = int(_cfg(ctx, "horizon", horizon, 500))
    dim = int(_cfg(ctx, "dim", dim, 1))
    path_kind = _cfg(ctx, "path_kind", path_kind, "sinusoid")
    z_amp = float(_cfg(ctx, "z_amplitude", z_amplitude, 1.0))
    try:
        sched = cert.sector()
        sysm = make_algorithm(cert.algorithm, sched, L_ref=cert.theta_hi)
        prob = make_varying_quadratic(
            cert.domain(), sched, d=dim, horizon=horizon, seed=seed,
            theta_path_kind=path_kind, z_amplitude=z_amp,
        )
        xi0 = None
        if x0 is not None:
            xi0 = np.full(sysm.n_xi * dim, float(x0))
        traj = simulate(sysm, prob, xi0=xi0)
        if cert.theorem == "pointwise":
            chk = check_bound_pointwise(cert, traj)
        else:
            chk = check_bound_variational(cert, traj)
    except Exception as exc:
        _fail(str(exc))
    if out:
        Path(out).write_text(trajectory_to_csv(traj, cert))
    click.echo(
        f"simulated {horizon} steps (seed {seed}, {path_kind}); "
        f"bound check max ratio {chk.max_ratio:.9f} -> "
        + ("pass" if chk.ok else "FAIL")
    )
    sys.exit(0 if chk.ok else 2)


@main.command("check-fixed-point")
@click.option("--algo", default=None, help="Algorithm id.")
@click.option("--kappa", default=None, type=float, help="Condition number.")
@click.option("--nu-frac", default=None, type=float, help="Variation budget fraction.")
@click.option("--m-value", default=None, type=float, help="Strong-convexity modulus.")
@click.option("--nodes", default=None, type=int, help="Grid nodes.")
@click.option("--theta-lo-frac", default=None, type=float)
@click.pass_context
def check_fixed_point_cmd(ctx, algo, kappa, nu_frac, m_value, nodes, theta_lo_frac):
    """Audit the uniform fixed-point structure of an algorithm on a domain."""
    algo = _cfg(ctx, "algo", algo, None)
    kappa = _cfg(ctx, "kappa", kappa, None)
    if algo is None or kappa is None:
        _fail("--algo and --kappa are required")
    spec = CellSpec(
        algorithm=str(algo),
        theorem="pointwise",
        kappa=float(kappa),
        nu_fraction=float(_cfg(ctx, "nu_frac", nu_frac, 0.0)),
        m_value=float(_cfg(ctx, "m_value", m_value, 1.0)),
        theta_lo_frac=float(_cfg(ctx, "theta_lo_frac", theta_lo_frac, 0.8)),
        n_nodes=int(_cfg(ctx, "nodes", nodes, 11)),
    )
    try:
        _dom, _sched, sysm, grid = spec.build()
        rep = check_fixed_point(sysm, grid)
    except Exception as exc:
        _fail(str(exc))
    click.echo(
        f"{algo}: U = {rep.U.ravel().tolist()}, residuals "
        f"A {rep.residual_A:.3e} / C {rep.residual_C:.3e}, "
        f"kernel_ok={rep.kernel_ok} -> {'ok' if rep.ok else 'FAIL'}"
    )
    sys.exit(0 if rep.ok else 2)


main.add_command(sweep_cmd, name="sweep")
main.add_command(simulate_cmd, name="simulate")


if __name__ == "__main__":
    main()
