"""Command-line interface.

Subcommands mirror the pipeline stages: quantum/classical runs, sweeps,
the scaling analyses, the Anderson-lattice mapping, and canned figure
reproduction.  Flags override config-file fields; exit codes are 0 on
success, 2 for validation errors, 3 for numerical non-convergence and
4 for sweeps that lost points.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import (
    BootstrapError,
    GridSaturatedError,
    NonConvergenceError,
    NonOverlapError,
    ParameterError,
    RankDeficiencyError,
    SweepFailure,
)
from .params import (
    format_rotor_params,
    load_config,
    log_schedule,
    rotor_from_config,
    sweep_from_config,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3
EXIT_PARTIAL = 4


def _default_workers() -> int:
    env = os.environ.get("QPKR_WORKERS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise ParameterError(f"QPKR_WORKERS={env!r} is not an integer")
        if n < 1:
            raise ParameterError("QPKR_WORKERS must be >= 1")
        return n
    return os.cpu_count() or 1


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ParameterError(f"expected a comma-separated integer list: {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ParameterError(f"expected a comma-separated float list: {text!r}")


def _print_json(payload: dict) -> None:
    from .harness import _canonical, _scrub_nonfinite

    print(json.dumps(_scrub_nonfinite(_canonical(payload)), indent=1,
                     sort_keys=True, allow_nan=False))


def _rotor_overrides(args) -> dict:
    return {k: getattr(args, a) for k, a in (
        ("k", "k"), ("kbar", "kbar"), ("epsilon", "epsilon"),
        ("phi2", "phi2"), ("phi3", "phi3"),
        ("eta_se", "eta_se"), ("eta_g", "eta_g"))}


def _ensemble_overrides(args) -> dict:
    return {k: getattr(args, a) for k, a in (
        ("n_traj", "n_traj"), ("seed", "seed"),
        ("initial_kind", "initial"), ("thermal_fwhm", "thermal_fwhm"),
        ("beta_sampling", "beta_sampling"), ("beta0", "beta0"),
        ("phase_sampling", "phase_sampling"))}


def _ensemble_from_config(cfg: dict):
    from .quantum import EnsembleSpec

    e = cfg["ensemble"]
    return EnsembleSpec(
        n_traj=e["n_traj"], seed=e["seed"], initial_kind=e["initial_kind"],
        thermal_fwhm=e["thermal_fwhm"], beta_sampling=e["beta_sampling"],
        beta0=e["beta0"], phase_sampling=e["phase_sampling"])


def _record_times(cfg: dict):
    sched = cfg["schedule"]
    if sched["record_times"]:
        return np.asarray(_int_list(sched["record_times"]), dtype=np.int64)
    return log_schedule(1, sched["t_max"], sched["points_per_decade"])


def _add_rotor_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=float, help="kick strength K")
    p.add_argument("--kbar", type=float, help="effective Planck constant")
    p.add_argument("--epsilon", type=float, help="modulation depth")
    p.add_argument("--phi2", type=float, help="second-frequency phase")
    p.add_argument("--phi3", type=float, help="third-frequency phase")
    p.add_argument("--eta-se", dest="eta_se", type=float,
                   help="spontaneous-emission rate per kick")
    p.add_argument("--eta-g", dest="eta_g", type=float,
                   help="gravity drift per kick (units of kbar)")


def _add_ensemble_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--initial", choices=("plane_zero", "thermal"))
    p.add_argument("--thermal-fwhm", dest="thermal_fwhm", type=float)
    p.add_argument("--beta-sampling", dest="beta_sampling",
                   choices=("uniform", "fixed"))
    p.add_argument("--beta0", type=float)
    p.add_argument("--phase-sampling", dest="phase_sampling",
                   choices=("uniform", "fixed"))


def _add_schedule_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--points-per-decade", dest="points_per_decade", type=int)
    p.add_argument("--record-times", dest="record_times",
                   help="comma-separated kick counts (overrides the schedule)")


def _schedule_overrides(args) -> dict:
    return {"t_max": args.t_max,
            "points_per_decade": args.points_per_decade,
            "record_times": args.record_times}


# ------------------------------------------------------------ subcommands

def _cmd_evolve(args) -> int:
    from .harness import run_point

    cfg = load_config(args.config, {
        "rotor": _rotor_overrides(args),
        "ensemble": _ensemble_overrides(args),
        "schedule": _schedule_overrides(args),
        "grid": {"n": args.grid_n, "auto": None},
        "output": {"dir": args.out_dir},
    })
    params = rotor_from_config(cfg)
    spec = _ensemble_from_config(cfg)
    print(format_rotor_params(params))
    times = _record_times(cfg)
    dist_times = tuple(_int_list(args.distributions)) if args.distributions else ()
    grid_n = None if cfg["grid"]["auto"] and args.grid_n is None else cfg["grid"]["n"]
    series, rid, cached = run_point(
        params, spec, cfg["schedule"]["t_max"], times,
        out_dir=cfg["output"]["dir"], grid_n=grid_n,
        workers=args.workers, distribution_times=dist_times)
    print(f"run {rid} {'loaded from cache' if cached else 'computed'}")
    print(f"final <p2> = {series.p2_mean[-1]:.6g} +/- {series.p2_sem[-1]:.2g} "
          f"at t = {int(series.times[-1])}")
    print(os.path.join(cfg["output"]["dir"], "points", rid))
    return EXIT_OK


def _cmd_classical(args) -> int:
    from .harness import run_classical_point

    cfg = load_config(args.config, {
        "rotor": _rotor_overrides(args),
        "ensemble": {"n_traj": args.n_traj, "seed": args.seed},
        "schedule": _schedule_overrides(args),
        "output": {"dir": args.out_dir},
    })
    params = rotor_from_config(cfg)
    print(format_rotor_params(params))
    series, rid, cached = run_classical_point(
        params, n_traj=cfg["ensemble"]["n_traj"], t_max=cfg["schedule"]["t_max"],
        seed=cfg["ensemble"]["seed"], out_dir=cfg["output"]["dir"],
        points_per_decade=cfg["schedule"]["points_per_decade"],
        initial_kind=args.initial or "thermal")
    print(f"run {rid} {'loaded from cache' if cached else 'computed'}")
    print(f"final <p2> = {series.p2_mean[-1]:.6g} at t = {int(series.times[-1])}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .harness import run_sweep
    from .scaling import write_dataset

    cfg = load_config(args.config, {
        "rotor": _rotor_overrides(args),
        "ensemble": _ensemble_overrides(args),
        "schedule": {"t_max": args.t_max, "t_min": args.t_min,
                     "points_per_decade": args.points_per_decade,
                     "record_times": None},
        "sweep": {"k_start": args.k_start, "k_end": args.k_end,
                  "eps_start": args.eps_start, "eps_end": args.eps_end,
                  "n_points": args.n_points},
        "output": {"dir": args.out_dir},
    })
    params = rotor_from_config(cfg)
    spec = _ensemble_from_config(cfg)
    path = sweep_from_config(cfg)
    print(format_rotor_params(params))
    print(f"sweep: K {path.k_start} -> {path.k_end}, eps {path.eps_start} "
          f"-> {path.eps_end}, {path.n_points} points")
    result = run_sweep(
        path, params, spec, cfg["schedule"]["t_max"],
        out_dir=cfg["output"]["dir"], t_min=cfg["schedule"]["t_min"],
        points_per_decade=cfg["schedule"]["points_per_decade"],
        workers=args.workers, paper_scale=args.paper_scale)
    ddir = os.path.join(cfg["output"]["dir"], "datasets")
    os.makedirs(ddir, exist_ok=True)
    dpath = os.path.join(ddir, f"sweep_{result.sweep_id}.tsv")
    with open(dpath, "w") as fh:
        write_dataset(result.dataset, fh)
    print(f"dataset: {dpath}")
    if result.failed:
        for i, K, eps, err in result.failed:
            print(f"point {i} (K={K:.4g}, eps={eps:.4g}) failed: {err}",
                  file=sys.stderr)
        print(f"{len(result.failed)} of {path.n_points} points failed",
              file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_collapse(args) -> int:
    from .harness import _write_report, _write_table
    from .scaling import collapse, normalize_xi, read_dataset

    with open(args.dataset) as fh:
        ds = read_dataset(fh)
    if args.t_min is not None:
        ds = ds.window(t_min=args.t_min)
    result = collapse(ds)
    normalized = False
    if args.normalize_refs:
        refs = _float_list(args.normalize_refs)
        result = normalize_xi(result, ds, refs)
        normalized = True
    out = args.output
    os.makedirs(out, exist_ok=True)
    _write_table(os.path.join(out, "shifts.tsv"),
                 ("K", "ln_xi", "ln_xi_err", "identified"),
                 zip(result.K, result.ln_xi, result.ln_xi_err,
                     result.identified))
    _write_table(os.path.join(out, "common_curve.tsv"),
                 ("ln_lambda", "x"),
                 zip(result.curve_ln_lambda, result.curve_x))
    report = {"reduced_chi2": result.chi2 / result.n_dof,
              "residual_variance": result.residual_variance,
              "n_iter": result.n_iter, "normalized": normalized,
              "n_identified": int(np.sum(result.identified))}
    _write_report(os.path.join(out, "report.json"), report)
    _print_json(report)
    print(f"wrote {out}/shifts.tsv, common_curve.tsv, report.json")
    return EXIT_OK


def _cmd_fit_critical(args) -> int:
    from .scaling import bootstrap_cutoff, critical_window, fit_critical_cutoff

    tab = np.genfromtxt(args.xi_table, names=True)
    for col in ("K", "xi", "xi_err"):
        if col not in (tab.dtype.names or ()):
            raise ParameterError(f"xi table lacks required column {col!r}")
    K, xi, xi_err = tab["K"], tab["xi"], tab["xi_err"]
    report = {}
    if args.window is not None:
        m = critical_window(K, xi, rel_half_width=args.window)
        report["fit_window"] = [float(K[m][0]), float(K[m][-1])]
        K, xi, xi_err = K[m], xi[m], xi_err[m]
    fit = fit_critical_cutoff(K, xi, xi_err)
    report.update({
        "Kc": fit.Kc, "Kc_err": fit.Kc_err, "nu": fit.nu,
        "nu_err": fit.nu_err, "alpha": fit.alpha, "alpha_err": fit.alpha_err,
        "beta": fit.beta, "beta_err": fit.beta_err,
        "reduced_chi2": fit.chi2 / fit.n_dof, "degenerate": fit.degenerate})
    if args.bootstrap:
        ci, _, n_failed = bootstrap_cutoff(
            K, np.log(xi), xi_err / xi,
            n_resamples=args.bootstrap, seed=args.seed)
        report["bootstrap_ci"] = ci
        report["bootstrap_failures"] = n_failed
    _print_json(report)
    return EXIT_OK


def _cmd_fit_full(args) -> int:
    from .scaling import (bootstrap_full_scaling, fit_full_scaling,
                          order_robustness, read_dataset)

    with open(args.dataset) as fh:
        ds = read_dataset(fh)
    if args.t_min is not None:
        ds = ds.window(t_min=args.t_min)
    orders = tuple(_int_list(args.orders))
    if len(orders) != 3:
        raise ParameterError("--orders must be n_R,n_I,m_R")
    fit = fit_full_scaling(ds, orders=orders)
    report = {
        "Kc": fit.Kc, "nu": fit.nu, "y": fit.y,
        "ln_lambda_c": fit.ln_lambda_c, "param_errors": fit.param_errors,
        "orders": list(fit.orders), "reduced_chi2": fit.chi2 / fit.n_dof,
        "t_window": [int(ds.t[0]), int(ds.t[-1])],
    }
    if args.robustness:
        report["order_robustness"] = list(order_robustness(ds))
    if args.bootstrap:
        _, boot = bootstrap_full_scaling(ds, orders=orders,
                                         n_resamples=args.bootstrap,
                                         seed=args.seed)
        report["bootstrap_ci"] = boot.intervals
        report["bootstrap_failures"] = boot.n_failed
    _print_json(report)
    return EXIT_OK


def _cmd_anderson_map(args) -> int:
    from .anderson import (hopping_coefficients_1d, hopping_coefficients_3d,
                           hopping_decay_rate)
    from .harness import _write_table

    cfg = load_config(args.config, {"rotor": _rotor_overrides(args)})
    params = rotor_from_config(cfg)
    print(format_rotor_params(params))
    report = {"K": params.K, "kbar": params.kbar, "epsilon": params.epsilon}
    os.makedirs(args.output, exist_ok=True)
    h1 = hopping_coefficients_1d(params.K, params.kbar, r_max=args.r_max)
    _write_table(os.path.join(args.output, "hopping_1d.tsv"),
                 ("r", "W_r"), zip(h1.offsets[0], h1.values))
    gamma, gamma_err = hopping_decay_rate(h1)
    report["decay_rate"] = gamma
    report["decay_rate_err"] = gamma_err
    if params.epsilon > 0:
        h3 = hopping_coefficients_3d(params.K, params.epsilon, params.kbar,
                                     r_max=min(args.r_max, 8))
        rows = []
        r = h3.offsets[0]
        for i1, r1 in enumerate(r):
            for i2, r2 in enumerate(r):
                for i3, r3 in enumerate(r):
                    v = h3.values[i1, i2, i3]
                    if abs(v) > 1e-12:
                        rows.append((r1, r2, r3, v))
        _write_table(os.path.join(args.output, "hopping_3d.tsv"),
                     ("r1", "r2", "r3", "W"), rows)
        report["n_significant_3d"] = len(rows)
    _print_json(report)
    print(f"wrote tables under {args.output}")
    return EXIT_OK


def _cmd_check_commensurate(args) -> int:
    from .anderson import commensurability_check

    cfg = load_config(args.config, {
        "rotor": {"kbar": args.kbar, "omega2": args.omega2,
                  "omega3": args.omega3}})
    r = cfg["rotor"]
    report = commensurability_check(r["kbar"], r["omega2"], r["omega3"],
                                    tol=args.tol, q_max=args.q_max)
    payload = {
        "kbar": r["kbar"], "omega2": r["omega2"], "omega3": r["omega3"],
        "tol": args.tol, "q_max": args.q_max, "clean": report.clean,
        "pairs": [
            {"pair": list(ra.pair), "ratio": ra.ratio,
             "numerator": ra.numerator, "denominator": ra.denominator,
             "error": ra.error}
            for ra in report.pairs],
        "flags": [
            {"coefficients": list(fl.coefficients), "residual": fl.residual}
            for fl in report.flags],
    }
    _print_json(payload)
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    from .harness import reproduce_figure

    paths = reproduce_figure(args.figure_id, out_dir=args.out_dir,
                             workers=args.workers)
    for p in paths:
        print(p)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpkr",
        description="Quasiperiodic kicked rotor simulation and scaling "
                    "analysis toolkit")
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--out-dir", dest="out_dir",
                        help="run/cache directory (default: runs)")
    parser.add_argument("--workers", type=int, default=None,
                        help="parallel workers (default: QPKR_WORKERS or "
                             "all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="quantum ensemble at one (K, eps)")
    _add_rotor_flags(p)
    _add_ensemble_flags(p)
    _add_schedule_flags(p)
    p.add_argument("--grid-n", dest="grid_n", type=int,
                   help="momentum grid size (power of two)")
    p.add_argument("--distributions",
                   help="comma-separated times at which to store |psi(p)|^2")
    p.set_defaults(func=_cmd_evolve)

    p = sub.add_parser("classical", help="classical ensemble at one (K, eps)")
    _add_rotor_flags(p)
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--initial", choices=("plane_zero", "thermal"))
    _add_schedule_flags(p)
    p.set_defaults(func=_cmd_classical)

    p = sub.add_parser("sweep", help="quantum sweep along a (K, eps) path")
    _add_rotor_flags(p)
    _add_ensemble_flags(p)
    p.add_argument("--k-start", dest="k_start", type=float)
    p.add_argument("--k-end", dest="k_end", type=float)
    p.add_argument("--eps-start", dest="eps_start", type=float)
    p.add_argument("--eps-end", dest="eps_end", type=float)
    p.add_argument("--n-points", dest="n_points", type=int)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--t-min", dest="t_min", type=int)
    p.add_argument("--points-per-decade", dest="points_per_decade", type=int)
    p.add_argument("--paper-scale", action="store_true",
                   help="allow schedules beyond 1e5 kicks (prints a cost "
                        "estimate first)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("collapse", help="scaling collapse of a sweep dataset")
    p.add_argument("--dataset", required=True, help="dataset TSV from sweep")
    p.add_argument("--t-min", dest="t_min", type=int)
    p.add_argument("--normalize-refs", dest="normalize_refs",
                   help="comma-separated diffusive K values fixing the "
                        "ln xi gauge")
    p.add_argument("--output", default="collapse_out")
    p.set_defaults(func=_cmd_collapse)

    p = sub.add_parser("fit-critical",
                       help="power-law cutoff fit of xi(K)")
    p.add_argument("--xi-table", dest="xi_table", required=True,
                   help="TSV with columns K, xi, xi_err")
    p.add_argument("--window", type=float,
                   help="restrict to |K - K_peak| <= window * K_peak")
    p.add_argument("--bootstrap", type=int,
                   help="number of bootstrap resamples")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_fit_critical)

    p = sub.add_parser("fit-full",
                       help="finite-time scaling fit with corrections")
    p.add_argument("--dataset", required=True, help="dataset TSV from sweep")
    p.add_argument("--t-min", dest="t_min", type=int)
    p.add_argument("--orders", default="3,1,2", help="n_R,n_I,m_R")
    p.add_argument("--robustness", action="store_true",
                   help="also fit neighbouring orders and report nu")
    p.add_argument("--bootstrap", type=int,
                   help="number of bootstrap resamples")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_fit_full)

    p = sub.add_parser("anderson-map",
                       help="tight-binding coefficients of the rotor")
    _add_rotor_flags(p)
    p.add_argument("--r-max", dest="r_max", type=int, default=16)
    p.add_argument("--output", default="anderson_out")
    p.set_defaults(func=_cmd_anderson_map)

    p = sub.add_parser("check-commensurate",
                       help="resonance diagnostics of (kbar, omega2, omega3)")
    p.add_argument("--kbar", type=float)
    p.add_argument("--omega2", type=float)
    p.add_argument("--omega3", type=float)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--q-max", dest="q_max", type=int, default=20)
    p.set_defaults(func=_cmd_check_commensurate)

    p = sub.add_parser("reproduce", help="regenerate a canned figure dataset")
    p.add_argument("figure_id", help="fig1, fig3, fig4, fig5, fig7, fig9, "
                                     "fig10a, fig10b, fig11, fig12, fig13, "
                                     "fig15")
    p.set_defaults(func=_cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.workers is None:
            args.workers = _default_workers()
        return args.func(args)
    except (ParameterError, RankDeficiencyError, NonOverlapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NonConvergenceError, BootstrapError, GridSaturatedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except SweepFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
