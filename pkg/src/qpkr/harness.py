"""Batch orchestration: content-addressed run caching, sweeps along a
(K, epsilon) path, and figure-data emission.

Every simulation point is persisted under a run id that is the SHA-256 of
its full configuration (params, ensemble spec, schedule, grid, code
version).  Re-running an identical configuration loads the stored series
instead of recomputing, which provides both crash-resume for sweeps and
byte-identical reruns: the text files are written with round-trip float
formatting and never rewritten once complete.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .classical import evolve_classical_ensemble
from .errors import ParameterError
from .observables import (EnsembleSeries, read_series, write_distributions,
                          write_series)
from .params import RotorParams, SweepPath, log_schedule
from .quantum import DEFAULT_GRID, EnsembleSpec, evolve_ensemble

PAPER_SCALE_KICKS = 100_000  # above this, runs must opt in explicitly
SECONDS_PER_TRAJ_KICK = 45e-6  # measured: n=2048 split-step, one core


def _canonical(obj):
    """Reduce config objects to JSON-stable primitives for hashing."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _canonical(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def content_hash(config: dict) -> str:
    import hashlib

    blob = json.dumps(_canonical(config), sort_keys=True,
                      separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class RunManifest:
    """Identity and provenance of one stored run."""

    run_id: str
    kind: str
    config: dict
    outputs: tuple
    elapsed_s: float = float("nan")

    def write(self, path: str) -> None:
        doc = {"run_id": self.run_id, "kind": self.kind,
               "version": __version__, "config": _canonical(self.config),
               "outputs": list(self.outputs), "elapsed_s": self.elapsed_s}
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)


def _point_config(kind: str, params: RotorParams, spec: EnsembleSpec | dict,
                  t_max: int, record_times, grid_n, distribution_times) -> dict:
    return {
        "kind": kind,
        "params": params,
        "spec": spec,
        "t_max": int(t_max),
        "record_times": list(int(t) for t in record_times),
        "grid_n": grid_n,
        "distribution_times": list(int(t) for t in distribution_times),
        "version": __version__,
    }


def _write_point(out_dir: str, run_id: str, kind: str, config: dict,
                 series: EnsembleSeries, elapsed: float) -> None:
    pdir = os.path.join(out_dir, "points", run_id)
    os.makedirs(pdir, exist_ok=True)
    series.run_id = run_id
    outputs = ["series.tsv"]
    tmp = os.path.join(pdir, "series.tsv.tmp")
    with open(tmp, "w") as fh:
        write_series(series, fh)
    os.replace(tmp, os.path.join(pdir, "series.tsv"))
    if series.distributions:
        tmp = os.path.join(pdir, "distributions.tsv.tmp")
        with open(tmp, "w") as fh:
            write_distributions(series, fh)
        os.replace(tmp, os.path.join(pdir, "distributions.tsv"))
        outputs.append("distributions.tsv")
    RunManifest(run_id=run_id, kind=kind, config=config,
                outputs=tuple(outputs), elapsed_s=elapsed,
                ).write(os.path.join(pdir, "manifest.json"))


def _load_point(out_dir: str, run_id: str) -> EnsembleSeries | None:
    pdir = os.path.join(out_dir, "points", run_id)
    spath = os.path.join(pdir, "series.tsv")
    if not (os.path.exists(spath) and os.path.exists(os.path.join(pdir, "manifest.json"))):
        return None
    dpath = os.path.join(pdir, "distributions.tsv")
    with open(spath) as fh:
        if os.path.exists(dpath):
            with open(dpath) as dfh:
                return read_series(fh, dfh)
        return read_series(fh)


def run_point(params: RotorParams, spec: EnsembleSpec, t_max: int,
              record_times=None, *, out_dir: str, grid_n: int | None = None,
              workers: int = 1, distribution_times: tuple = (),
              points_per_decade: int = 10, force: bool = False,
              ) -> tuple[EnsembleSeries, str, bool]:
    """Run (or load) one quantum ensemble; returns (series, run_id, cached)."""
    if record_times is None:
        record_times = log_schedule(1, t_max, points_per_decade) if t_max else [0]
    record_times = np.unique(np.asarray(record_times, dtype=np.int64))
    config = _point_config("evolve", params, spec, t_max, record_times,
                           grid_n if grid_n is not None else DEFAULT_GRID,
                           distribution_times)
    run_id = content_hash(config)
    if not force:
        cached = _load_point(out_dir, run_id)
        if cached is not None:
            cached.params = params  # restore full parameter set
            return cached, run_id, True
    t0 = time.time()
    series = evolve_ensemble(params, spec, t_max, record_times,
                             grid_n=grid_n, workers=workers,
                             distribution_times=distribution_times)
    _write_point(out_dir, run_id, "evolve", config, series, time.time() - t0)
    return series, run_id, False


def run_classical_point(params: RotorParams, *, n_traj: int, t_max: int,
                        seed: int, out_dir: str, points_per_decade: int = 10,
                        initial_kind: str = "thermal",
                        distribution_times: tuple = (), force: bool = False,
                        ) -> tuple[EnsembleSeries, str, bool]:
    """Classical analogue of run_point, same cache layout."""
    spec = {"n_traj": int(n_traj), "seed": int(seed),
            "initial_kind": initial_kind,
            "points_per_decade": int(points_per_decade)}
    record_times = log_schedule(1, t_max, points_per_decade)
    config = _point_config("classical", params, spec, t_max, record_times,
                           None, distribution_times)
    run_id = content_hash(config)
    if not force:
        cached = _load_point(out_dir, run_id)
        if cached is not None:
            cached.params = params
            cached.source = "classical"
            return cached, run_id, True
    t0 = time.time()
    series = evolve_classical_ensemble(
        params, n_traj=n_traj, t_max=t_max, seed=seed,
        points_per_decade=points_per_decade, initial_kind=initial_kind,
        distribution_times=distribution_times)
    _write_point(out_dir, run_id, "classical", config, series, time.time() - t0)
    return series, run_id, False


def estimate_cost_s(n_points: int, n_traj: int, t_max: int,
                    grid_n: int = DEFAULT_GRID) -> float:
    """Wall-clock estimate for a sweep, from the measured per-kick rate."""
    scale = grid_n / DEFAULT_GRID
    return n_points * n_traj * t_max * SECONDS_PER_TRAJ_KICK * max(scale, 0.25)


@dataclass
class SweepResult:
    dataset: "object"           # scaling.ScalingDataset
    series: dict                # K -> EnsembleSeries
    run_ids: dict               # K -> run id
    failed: list                # (index, K, epsilon, error string)
    sweep_id: str


def run_sweep(path: SweepPath, params_template: RotorParams,
              spec: EnsembleSpec, t_max: int, *, out_dir: str,
              t_min: int = 30, points_per_decade: int = 10,
              grid_n: int | None = None, workers: int = 1,
              paper_scale: bool = False, log=None) -> SweepResult:
    """Evolve every point of the path and assemble a ScalingDataset.

    Points that raise are reported in `failed` and excluded; the dataset
    rectangle shrinks to the surviving K values.  All points are cached
    individually, so an interrupted sweep resumes where it stopped.
    Schedules beyond 10^5 kicks are refused unless paper_scale=True, in
    which case a cost estimate is printed before starting.
    """
    if t_max > PAPER_SCALE_KICKS and not paper_scale:
        raise ParameterError(
            f"t_max={t_max} exceeds {PAPER_SCALE_KICKS}; pass paper_scale=True "
            "to accept the cost")
    emit = log if log is not None else (lambda msg: print(msg, file=sys.stderr))
    if paper_scale:
        cost = estimate_cost_s(path.n_points, spec.n_traj, t_max,
                               grid_n or DEFAULT_GRID)
        emit(f"paper-scale sweep: {path.n_points} points x {spec.n_traj} traj "
             f"x {t_max} kicks, estimated {cost/3600:.1f} h on one core")
    record_times = log_schedule(1, t_max, points_per_decade)
    series_by_k: dict[float, EnsembleSeries] = {}
    ids: dict[float, str] = {}
    failed = []
    for i, (K, eps) in enumerate(path.points()):
        params = replace(params_template, K=float(K), epsilon=float(eps))
        point_spec = replace(spec, seed=spec.seed + i)
        try:
            series, rid, cached = run_point(
                params, point_spec, t_max, record_times, out_dir=out_dir,
                grid_n=grid_n, workers=workers)
        except Exception as exc:  # a failed point must not sink the sweep
            failed.append((i, float(K), float(eps), repr(exc)))
            emit(f"point {i} (K={K:.4g}, eps={eps:.4g}) failed: {exc!r}")
            continue
        series_by_k[float(K)] = series
        ids[float(K)] = rid
        emit(f"point {i} (K={K:.4g}) {'cached' if cached else 'done'}")

    from .scaling import dataset_from_series

    dataset = dataset_from_series(series_by_k, t_min=t_min)
    sweep_id = content_hash({
        "kind": "sweep", "path": path, "params": params_template,
        "spec": spec, "t_max": int(t_max), "t_min": int(t_min),
        "points_per_decade": points_per_decade, "point_ids": sorted(ids.values()),
    })
    return SweepResult(dataset=dataset, series=series_by_k, run_ids=ids,
                       failed=failed, sweep_id=sweep_id)


def default_output_dir() -> str:
    return os.environ.get("QPKR_RUNS_DIR", "runs")


# ---------------------------------------------------------------------------
# figure-data emission
#
# Each figure id maps to a canned pipeline that produces the plotted
# quantities as delimited tables plus a JSON fit report.  The configs
# deliberately coincide with the cached acceptance data, so reproducing a
# figure against a warm cache only reruns the analysis.

_FMT = "%.17g"

_DESK_TEMPLATE = RotorParams(K=6.4, kbar=2.85, epsilon=0.436)
_DESK_SPEC = None  # filled lazily; EnsembleSpec is imported at module load
_SLOPE_PATH = SweepPath(6.2, 6.6, 0.408, 0.464, 7)
_SLOPE_WINDOW = (6.2, 6.6)


def _fmt_cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return _FMT % float(v)


def _write_table(path: str, columns, rows) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt_cell(v) for v in row) + "\n")
    os.replace(tmp, path)


def _scrub_nonfinite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _scrub_nonfinite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_scrub_nonfinite(v) for v in obj]
    return obj


def _write_report(path: str, payload: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(_scrub_nonfinite(_canonical(payload)), fh, indent=1,
                  sort_keys=True, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


def _series_rows(label, series):
    for i, t in enumerate(series.times):
        yield (label, int(t), series.p2_mean[i], series.p2_sem[i])


def _late_slope(series, t_lo):
    sel = series.times >= t_lo
    lt = np.log(series.times[sel].astype(float))
    return float(np.polyfit(lt, np.log(series.p2_mean[sel]), 1)[0])


def _desk_sweep(out_dir: str, workers: int):
    from .params import EXPERIMENTAL_PATH

    spec = EnsembleSpec(n_traj=200, seed=100, initial_kind="plane_zero")
    return run_sweep(EXPERIMENTAL_PATH, _DESK_TEMPLATE, spec, 10_000,
                     out_dir=out_dir, workers=workers)


def _slope_sweep(out_dir: str, workers: int, t_min: int = 30):
    spec = EnsembleSpec(n_traj=200, seed=200, initial_kind="plane_zero")
    return run_sweep(_SLOPE_PATH, _DESK_TEMPLATE, spec, 40_000,
                     out_dir=out_dir, t_min=t_min, workers=workers)


def _fig1(fdir, out_dir, workers):
    from .classical import evolve_classical_3d
    from .observables import fit_gaussian_shape

    params = RotorParams(K=10.0, kbar=2.85, epsilon=0.8)
    res = evolve_classical_3d(params, n_traj=100_000, t_max=1000, seed=11)
    _write_table(os.path.join(fdir, "second_moments.tsv"),
                 ("t", "dp1_sq", "dp2_sq", "dp3_sq"),
                 zip(res.times, res.dp1_sq, res.dp2_sq, res.dp3_sq))
    _write_table(os.path.join(fdir, "p1_distribution.tsv"),
                 ("p_bin", "density"),
                 zip(res.final_p1.p, res.final_p1.density))
    gauss = fit_gaussian_shape(res.final_p1)
    return {"params": params,
            "D": {"D1": res.D1, "D2": res.D2, "D3": res.D3},
            "D_err": {"D1": res.D1_err, "D2": res.D2_err, "D3": res.D3_err},
            "anisotropy_D1_over_D2": res.D1 / res.D2,
            "gaussian_fit": {"sigma": gauss.sigma, "sigma_err": gauss.sigma_err,
                             "goodness": gauss.goodness,
                             "accepted": gauss.accepted}}


def _fig3(fdir, out_dir, workers):
    from .params import EXPERIMENTAL_PATH

    rows = []
    exponents = {}
    for i, (K, eps) in enumerate(EXPERIMENTAL_PATH.points()):
        params = RotorParams(K=float(K), kbar=2.85, epsilon=float(eps))
        series, _, _ = run_classical_point(
            params, n_traj=5000, t_max=1000, seed=600 + i, out_dir=out_dir)
        rows.extend(_series_rows(_FMT % K, series))
        exponents[_FMT % K] = _late_slope(series, 100)
    _write_table(os.path.join(fdir, "series.tsv"),
                 ("K", "t", "p2_mean", "p2_sem"), rows)
    values = np.array(list(exponents.values()))
    return {"per_K_exponent": exponents,
            "mean_exponent": float(values.mean()),
            "max_abs_deviation_from_1": float(np.abs(values - 1.0).max())}


def _localization_points(out_dir):
    times = np.unique(np.concatenate(
        [log_schedule(1, 1000, 12), [50, 150]]))
    out = {}
    for j, (K, eps) in enumerate([(5.0, 0.24), (9.0, 0.8)]):
        params = RotorParams(K=K, kbar=2.89, epsilon=eps)
        spec = EnsembleSpec(n_traj=500, seed=400 + j,
                            initial_kind="plane_zero")
        series, _, _ = run_point(params, spec, 1000, times, out_dir=out_dir,
                                 distribution_times=(150,))
        out[K] = series
    return out


def _fig4(fdir, out_dir, workers):
    from .observables import fit_exponential_localization, fit_gaussian_shape

    series = _localization_points(out_dir)
    report = {}
    for K, s in series.items():
        dist = s.distributions[150]
        _write_table(os.path.join(fdir, f"distribution_K{K:g}.tsv"),
                     ("p_bin", "density"), zip(dist.p, dist.density))
        exp_fit = fit_exponential_localization(dist)
        gauss_fit = fit_gaussian_shape(dist)
        report[f"K={K:g}"] = {
            "exponential": {"ell": exp_fit.ell, "ell_err": exp_fit.ell_err,
                            "goodness": exp_fit.goodness,
                            "accepted": exp_fit.accepted},
            "gaussian": {"sigma": gauss_fit.sigma,
                         "sigma_err": gauss_fit.sigma_err,
                         "goodness": gauss_fit.goodness,
                         "accepted": gauss_fit.accepted}}
    return report


def _fig5(fdir, out_dir, workers):
    series = _localization_points(out_dir)
    rows = []
    report = {}
    for K, s in series.items():
        rows.extend(_series_rows(_FMT % K, s))
        report[f"K={K:g}"] = {"late_log_slope": _late_slope(s, 100)}
    _write_table(os.path.join(fdir, "series.tsv"),
                 ("K", "t", "p2_mean", "p2_sem"), rows)
    return report


def _fig7(fdir, out_dir, workers):
    from .observables import fit_anomalous_diffusion
    from .scaling import wegner_consistency

    times = log_schedule(1, 10_000, 10)
    rows = []
    report = {}
    for j, (K, eps) in enumerate([(5.0, 0.24), (6.4, 0.436), (8.0, 0.66)]):
        params = RotorParams(K=K, kbar=2.85, epsilon=eps)
        spec = EnsembleSpec(n_traj=200, seed=300 + j,
                            initial_kind="plane_zero")
        series, _, _ = run_point(params, spec, 10_000, times, out_dir=out_dir)
        rows.extend(_series_rows(_FMT % K, series))
        if K == 6.4:
            fit = fit_anomalous_diffusion(series, (100, 10_000))
            wegner = wegner_consistency(fit.k)
            report["critical"] = {
                "K": K, "k1": fit.k, "k1_err": fit.k_err,
                "curved": fit.curved,
                "wegner_deviation": wegner.deviation,
                "wegner_consistent": wegner.consistent}
        else:
            side = "below_Kc" if K < 6.4 else "above_Kc"
            report[side] = {"K": K, "late_slope": _late_slope(series, 1000)}
    _write_table(os.path.join(fdir, "series.tsv"),
                 ("K", "t", "p2_mean", "p2_sem"), rows)
    return report


def _fig9(fdir, out_dir, workers):
    from .params import EXPERIMENTAL_PATH

    times = log_schedule(1, 10_000, 10)
    pts = list(EXPERIMENTAL_PATH.points())
    (k_lo, e_lo), (k_hi, e_hi) = pts[0], pts[-1]
    cases = [
        (RotorParams(K=float(k_lo), kbar=2.85, epsilon=float(e_lo)),
         EnsembleSpec(n_traj=200, seed=100, initial_kind="plane_zero")),
        (RotorParams(K=6.4, kbar=2.85, epsilon=0.436),
         EnsembleSpec(n_traj=200, seed=301, initial_kind="plane_zero")),
        (RotorParams(K=float(k_hi), kbar=2.85, epsilon=float(e_hi)),
         EnsembleSpec(n_traj=200, seed=100 + len(pts) - 1,
                      initial_kind="plane_zero")),
    ]
    rows = []
    report = {}
    for params, spec in cases:
        series, _, _ = run_point(params, spec, 10_000, times,
                                 out_dir=out_dir)
        t = series.times.astype(float)
        ln_lam = np.log(series.p2_mean) - (2.0 / 3.0) * np.log(t)
        for i in range(len(t)):
            rows.append((_FMT % params.K, int(t[i]), ln_lam[i]))
        sel = series.times >= 1000
        slope = float(np.polyfit(np.log(t[sel]), ln_lam[sel], 1)[0])
        report[f"K={params.K:g}"] = {"late_ln_lambda_slope": slope}
    _write_table(os.path.join(fdir, "ln_lambda.tsv"),
                 ("K", "t", "ln_lambda"), rows)
    report["expected_slopes"] = {"localized": -2.0 / 3.0, "critical": 0.0,
                                 "diffusive": 1.0 / 3.0}
    return report


def _desk_collapse(out_dir, workers):
    from .scaling import collapse, normalize_xi

    sweep = _desk_sweep(out_dir, workers)
    ds = sweep.dataset
    result = collapse(ds)
    normalized = False
    try:
        result = normalize_xi(result, ds, ds.K[:4])
        normalized = True
    except ParameterError:
        pass  # keep the free gauge if no reference is saturated
    return sweep, ds, result, normalized


def _fig10a(fdir, out_dir, workers):
    sweep, ds, result, normalized = _desk_collapse(out_dir, workers)
    _write_table(os.path.join(fdir, "shifts.tsv"),
                 ("K", "ln_xi", "ln_xi_err", "identified"),
                 zip(result.K, result.ln_xi, result.ln_xi_err,
                     result.identified))
    _write_table(os.path.join(fdir, "common_curve.tsv"),
                 ("ln_lambda", "x"),
                 zip(result.curve_ln_lambda, result.curve_x))
    _write_table(os.path.join(fdir, "collapsed_points.tsv"),
                 ("K", "t", "x", "ln_lambda", "sigma"),
                 ((ds.K[i], int(ds.t[j]),
                   result.ln_xi[i] - np.log(float(ds.t[j])) / 3.0,
                   ds.ln_lambda[i, j], ds.sigma[i, j])
                  for i in range(len(ds.K)) for j in range(len(ds.t))))
    return {"reduced_chi2": result.chi2 / result.n_dof,
            "residual_variance": result.residual_variance,
            "n_iter": result.n_iter, "normalized": normalized,
            "failed_points": sweep.failed}


def _fig10b(fdir, out_dir, workers):
    from .scaling import bootstrap_cutoff, critical_window, fit_critical_cutoff

    _, ds, result, normalized = _desk_collapse(out_dir, workers)
    xi = np.exp(result.ln_xi)
    xi_err = xi * result.ln_xi_err
    m = critical_window(result.K, xi)
    fit = fit_critical_cutoff(result.K[m], xi[m], xi_err[m])
    ci, _, n_failed = bootstrap_cutoff(result.K[m], result.ln_xi[m],
                                       result.ln_xi_err[m], seed=10)
    _write_table(os.path.join(fdir, "xi.tsv"),
                 ("K", "xi", "xi_err", "in_fit_window"),
                 zip(result.K, xi, xi_err, m))
    return {"Kc": fit.Kc, "Kc_err": fit.Kc_err, "nu": fit.nu,
            "nu_err": fit.nu_err, "alpha": fit.alpha, "beta": fit.beta,
            "beta_err": fit.beta_err, "reduced_chi2": fit.chi2 / fit.n_dof,
            "degenerate": fit.degenerate, "normalized": normalized,
            "fit_window": [float(result.K[m][0]), float(result.K[m][-1])],
            "bootstrap_ci": ci, "bootstrap_failures": n_failed}


def _fig11(fdir, out_dir, workers):
    from .scaling import crossing_points

    sweep = _slope_sweep(out_dir, workers)
    ds = sweep.dataset
    picks = ds.t[np.unique(np.linspace(0, len(ds.t) - 1, 4).astype(int))]
    _write_table(os.path.join(fdir, "ln_lambda_vs_K.tsv"),
                 ("t", "K", "ln_lambda", "sigma"),
                 ((int(t), ds.K[i], ds.ln_lambda[i, j], ds.sigma[i, j])
                  for j, t in enumerate(ds.t) if t in picks
                  for i in range(len(ds.K))))
    crossings = crossing_points(ds, _SLOPE_WINDOW, times=picks)
    _write_table(os.path.join(fdir, "crossings.tsv"),
                 ("t_low", "t_high", "K_cross", "ln_lambda_cross"),
                 ((c.t_low, c.t_high, c.K_cross, c.ln_lambda_cross)
                  for c in crossings))
    kc = np.array([c.K_cross for c in crossings])
    lc = np.array([c.ln_lambda_cross for c in crossings])
    return {"times": [int(t) for t in picks],
            "K_cross_mean": float(kc.mean()), "K_cross_spread":
            float(kc.max() - kc.min()) if len(kc) else math.nan,
            "ln_lambda_cross_mean": float(lc.mean()) if len(lc) else math.nan,
            "failed_points": sweep.failed}


def _fig12(fdir, out_dir, workers):
    from .scaling import slope_method

    sweep = _slope_sweep(out_dir, workers)
    result = slope_method(sweep.dataset, _SLOPE_WINDOW)
    _write_table(os.path.join(fdir, "slopes.tsv"),
                 ("t", "dlnlambda_dk", "err"),
                 zip(result.t, result.dlnlambda_dk, result.dlnlambda_dk_err))
    return {"nu": result.nu, "nu_err": result.nu_err,
            "exponent": result.exponent, "exponent_err": result.exponent_err,
            "window": result.window, "n_dropped": result.n_dropped}


def _fig15(fdir, out_dir, workers):
    from .errors import NonConvergenceError
    from .scaling import fit_full_scaling

    sweep = _slope_sweep(out_dir, workers, t_min=300)
    ds = sweep.dataset
    try:
        fit = fit_full_scaling(ds, orders=(3, 1, 2))
    except NonConvergenceError:
        # short-time sweeps can leave the irrelevant exponent
        # unidentifiable; drop the correction term
        fit = fit_full_scaling(ds, orders=(3, 0, 2))
    n_r, n_i, m_r = fit.orders
    w = (ds.K - fit.Kc) / fit.Kc
    phi = np.zeros_like(w)
    for k in range(m_r, 0, -1):
        phi = (phi + fit.b[k - 1]) * w
    rows = []
    for i in range(len(ds.K)):
        if phi[i] == 0.0:
            continue  # exactly critical row has no finite abscissa
        ln_xi = -fit.nu * math.log(abs(phi[i]))
        for j, t in enumerate(ds.t):
            rows.append((ds.K[i], int(t),
                         ln_xi - math.log(float(t)) / 3.0,
                         int(np.sign(phi[i])),
                         fit.corrected_ln_lambda[i, j]))
    _write_table(os.path.join(fdir, "corrected_collapse.tsv"),
                 ("K", "t", "x", "branch", "ln_lambda_s"), rows)
    u_max = float(np.max(np.abs(phi))
                  * ds.t[-1] ** (1.0 / (3.0 * fit.nu)))
    u = np.linspace(-u_max, u_max, 513)
    y_model = sum(fit.coefficients[n, 0] * u ** n for n in range(n_r + 1))
    keep = np.abs(u) > 1e-12
    _write_table(os.path.join(fdir, "model_curve.tsv"),
                 ("x", "branch", "ln_lambda_model"),
                 ((-fit.nu * math.log(abs(uu)), int(np.sign(uu)), ym)
                  for uu, ym in zip(u[keep], y_model[keep])))
    return {"Kc": fit.Kc, "nu": fit.nu, "y": fit.y,
            "ln_lambda_c": fit.ln_lambda_c,
            "param_errors": fit.param_errors, "orders": list(fit.orders),
            "reduced_chi2": fit.chi2 / fit.n_dof,
            "t_window": [int(ds.t[0]), int(ds.t[-1])],
            "K_window": [float(ds.K[0]), float(ds.K[-1])]}


_FIGURES = {
    "fig1": _fig1,
    "fig3": _fig3,
    "fig4": _fig4,
    "fig5": _fig5,
    "fig7": _fig7,
    "fig9": _fig9,
    "fig10a": _fig10a,
    "fig10b": _fig10b,
    "fig11": _fig11,
    "fig12": _fig12,
    "fig13": _fig15,  # crossing-region corrected collapse, same pipeline
    "fig15": _fig15,
}


def reproduce_figure(figure_id: str, *, out_dir: str | None = None,
                     workers: int = 1) -> list[str]:
    """Produce the data files behind one figure; returns written paths.

    Runs the minimal simulation + analysis pipeline for the given id and
    writes delimited tables plus a `report.json` with the fit results
    under <out_dir>/figures/<figure_id>/.  Simulation points are cached
    like any other run, so a warm cache makes this cheap.
    """
    if figure_id not in _FIGURES:
        known = ", ".join(sorted(_FIGURES))
        raise ParameterError(f"unknown figure id {figure_id!r};"
                             f" known ids: {known}")
    out_dir = out_dir if out_dir is not None else default_output_dir()
    fdir = os.path.join(out_dir, "figures", figure_id)
    os.makedirs(fdir, exist_ok=True)
    report = _FIGURES[figure_id](fdir, out_dir, workers)
    report_path = os.path.join(fdir, "report.json")
    _write_report(report_path, {"figure": figure_id, **report})
    written = sorted(
        os.path.join(fdir, name) for name in os.listdir(fdir)
        if not name.endswith(".tmp"))
    return written
