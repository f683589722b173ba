"""Measured quantities: <p2>, Pi0, momentum distributions, and the fits
that turn ensemble time series into localization / diffusion diagnostics.

Momentum is expressed throughout in units of 2*hbar*kL ("p-frak" units,
the natural lattice spacing of the quantum problem); distributions are
binned on the integer momentum lattice.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .params import RotorParams

TWO_THIRDS = 2.0 / 3.0


@dataclass(frozen=True)
class Distribution:
    """Probability density over the integer momentum lattice.

    `p` holds the bin centers (integers, bin width 1); `density` integrates
    to one over the lattice.
    """

    p: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        d = np.asarray(self.density, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "density", d)
        if p.shape != d.shape or p.ndim != 1:
            raise ParameterError("p and density must be 1-d arrays of equal length")
        if np.any(d < -1e-15):
            raise ParameterError("density must be non-negative")

    def mass(self) -> float:
        return float(np.sum(self.density))

    def second_moment(self) -> float:
        return float(np.sum(self.density * self.p**2))

    def excess_kurtosis(self) -> float:
        m2 = np.sum(self.density * self.p**2)
        m4 = np.sum(self.density * self.p**4)
        return float(m4 / m2**2 - 3.0)


@dataclass
class EnsembleSeries:
    """Time-indexed ensemble averages of one run at fixed (K, epsilon).

    distributions maps a kick count to the ensemble-averaged momentum
    Distribution recorded at that time.  `saturated` marks record times at
    which at least one trajectory had tripped the grid-saturation flag.
    """

    params: RotorParams
    times: np.ndarray
    p2_mean: np.ndarray
    p2_sem: np.ndarray
    n_traj: int
    saturated: np.ndarray = None
    distributions: dict[int, Distribution] = field(default_factory=dict)
    pi0: np.ndarray | None = None
    source: str = "quantum"
    run_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.p2_mean = np.asarray(self.p2_mean, dtype=float)
        self.p2_sem = np.asarray(self.p2_sem, dtype=float)
        if self.saturated is None:
            self.saturated = np.zeros(self.times.shape, dtype=bool)
        self.saturated = np.asarray(self.saturated, dtype=bool)
        if not (self.times.shape == self.p2_mean.shape == self.p2_sem.shape
                == self.saturated.shape):
            raise ParameterError("series arrays must share one shape")
        if np.any(np.diff(self.times) <= 0):
            raise ParameterError("times must be strictly increasing")
        if np.any(self.p2_mean < 0):
            raise ParameterError("p2_mean must be non-negative")
        if np.any(self.p2_sem < 0):
            raise ParameterError("p2_sem must be non-negative")

    def attach_pi0(self, window_halfwidth: float = 0.5) -> None:
        """Fill the pi0 column from recorded distributions (NaN elsewhere)."""
        vals = np.full(self.times.shape, np.nan)
        for i, t in enumerate(self.times):
            if int(t) in self.distributions:
                vals[i] = pi0(self.distributions[int(t)], window_halfwidth)
        self.pi0 = vals


# --------------------------------------------------------------------------
# Plain-text persistence.  One header line per file; %.17g floats so that
# read(write(x)) == x bitwise and file hashes are stable.
# --------------------------------------------------------------------------

SERIES_COLUMNS = ("run_id", "K", "epsilon", "kbar", "t", "p2_mean", "p2_sem",
                  "n_traj", "saturated_flag", "source")
DIST_COLUMNS = ("run_id", "t", "p_bin", "density")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_series(series: EnsembleSeries, fh: io.TextIOBase) -> None:
    fh.write("\t".join(SERIES_COLUMNS) + "\n")
    p = series.params
    for i, t in enumerate(series.times):
        fh.write("\t".join((
            series.run_id or "-", _fmt(p.K), _fmt(p.epsilon), _fmt(p.kbar),
            str(int(t)), _fmt(series.p2_mean[i]), _fmt(series.p2_sem[i]),
            str(series.n_traj), str(int(series.saturated[i])), series.source,
        )) + "\n")


def write_distributions(series: EnsembleSeries, fh: io.TextIOBase) -> None:
    fh.write("\t".join(DIST_COLUMNS) + "\n")
    for t in sorted(series.distributions):
        dist = series.distributions[t]
        for pb, dens in zip(dist.p, dist.density):
            fh.write("\t".join((
                series.run_id or "-", str(int(t)), _fmt(pb), _fmt(dens),
            )) + "\n")


def read_series(fh: io.TextIOBase, dist_fh: io.TextIOBase | None = None,
                ) -> EnsembleSeries:
    header = fh.readline().strip().split("\t")
    if tuple(header) != SERIES_COLUMNS:
        raise ParameterError(f"unexpected series header: {header}")
    rows = [line.strip().split("\t") for line in fh if line.strip()]
    if not rows:
        raise ParameterError("empty series file")
    run_id = rows[0][0]
    K, eps, kbar = (float(rows[0][i]) for i in (1, 2, 3))
    params = RotorParams(K=K, kbar=kbar, epsilon=eps)
    series = EnsembleSeries(
        params=params,
        times=[int(r[4]) for r in rows],
        p2_mean=[float(r[5]) for r in rows],
        p2_sem=[float(r[6]) for r in rows],
        n_traj=int(rows[0][7]),
        saturated=[bool(int(r[8])) for r in rows],
        source=rows[0][9],
        run_id="" if run_id == "-" else run_id,
    )
    if dist_fh is not None:
        header = dist_fh.readline().strip().split("\t")
        if tuple(header) != DIST_COLUMNS:
            raise ParameterError(f"unexpected distribution header: {header}")
        by_t: dict[int, list[tuple[float, float]]] = {}
        for line in dist_fh:
            if not line.strip():
                continue
            cells = line.strip().split("\t")
            by_t.setdefault(int(cells[1]), []).append(
                (float(cells[2]), float(cells[3])))
        for t, pairs in by_t.items():
            arr = np.array(pairs)
            series.distributions[t] = Distribution(p=arr[:, 0], density=arr[:, 1])
    return series


# --------------------------------------------------------------------------
# Zero-momentum population
# --------------------------------------------------------------------------

def pi0(distribution: Distribution, window_halfwidth: float) -> float:
    """Density estimate at p = 0: integrated probability in
    |p| <= window_halfwidth divided by the window size 2*window_halfwidth.

    Bin k covers [k - 0.5, k + 0.5); windows narrower than one bin
    (halfwidth < 0.5) are rejected as sub-resolution.
    """
    if window_halfwidth < 0.5:
        raise ParameterError(
            f"window halfwidth {window_halfwidth} is below the bin width (1)")
    mass = distribution.mass()
    if not math.isclose(mass, 1.0, rel_tol=0, abs_tol=1e-6):
        raise ParameterError(f"distribution mass {mass} != 1")
    lo, hi = -window_halfwidth, window_halfwidth
    left = distribution.p - 0.5
    right = distribution.p + 0.5
    overlap = np.clip(np.minimum(right, hi) - np.maximum(left, lo), 0.0, None)
    return float(np.sum(distribution.density * overlap) / (2.0 * window_halfwidth))


# --------------------------------------------------------------------------
# Distribution-shape fits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalizationFit:
    """Exponential-decay fit exp(-|p|/ell) of a momentum distribution."""

    ell: float
    ell_err: float
    fit_window: tuple[float, float]
    goodness: float  # reduced chi^2 against the self-calibrated noise level
    accepted: bool

    def __post_init__(self):
        if self.accepted and not self.ell > 0:
            raise ParameterError("accepted fit must have ell > 0")


def _folded_log_density(dist: Distribution, q_min: float,
                        dynamic_range: float = 5.0
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Average density over +/-|p| and return (|p|, log density) for bins
    with |p| >= q_min whose density clears 10x the noise floor.

    The window is also capped at `dynamic_range` decades below the peak:
    spectral densities have no sampling floor and their 30-decade tails
    are transient (not yet asymptotic) at any finite time, so the shape
    claim only applies within a detection-scale range.
    """
    pos = dist.density > 0
    if not np.any(pos):
        raise ParameterError("empty distribution")
    noise_floor = np.min(dist.density[pos])
    qs = np.unique(np.abs(dist.p))
    folded = []
    for q in qs:
        sel = np.abs(dist.p) == q
        folded.append(np.mean(dist.density[sel]))
    folded = np.asarray(folded)
    in_range = qs >= q_min
    if not np.any(in_range & (folded > 0)):
        raise ParameterError("no bins above the noise floor in the fit window")
    top = np.max(folded[in_range])
    keep = (in_range & (folded > 10.0 * noise_floor)
            & (folded >= top * 10.0 ** (-dynamic_range)))
    # keep the contiguous block starting at q_min: past the first drop below
    # threshold the tail is noise-dominated
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise ParameterError("no bins above the noise floor in the fit window")
    stop = idx[0]
    while stop + 1 < len(qs) and keep[stop + 1]:
        stop += 1
    sel = slice(idx[0], stop + 1)
    return qs[sel], np.log(folded[sel])


def _self_calibrated_chi2(x: np.ndarray, resid: np.ndarray, n_par: int) -> float:
    """Reduced chi^2 with the noise scale estimated from second differences
    of the residuals, so smooth model mismatch (curvature) registers as a
    large value while white scatter gives ~1."""
    if len(resid) < n_par + 3:
        return np.inf
    d2 = np.diff(resid, 2)
    sigma2 = np.mean(d2**2) / 6.0
    sigma2 = max(sigma2, 1e-30)
    return float(np.sum(resid**2) / sigma2 / max(len(resid) - n_par, 1))


def fit_exponential_localization(distribution: Distribution,
                                 q_min: float = 2.0) -> LocalizationFit:
    """Weighted linear fit of log-density vs |p|; ell = -1/slope.

    The fit window starts at |p| = q_min and extends while the folded
    density exceeds 10x the noise floor.  Distributions whose log-density
    is not straight (e.g. Gaussians) are rejected with accepted=False via
    the reduced-chi^2 > 5 criterion.
    """
    q, logd = _folded_log_density(distribution, q_min)
    if len(q) < 4:
        return LocalizationFit(np.nan, np.nan, (q_min, q_min), np.inf, False)
    # ensemble noise in log density is bin-independent, so uniform weights
    coeffs, cov = np.polyfit(q, logd, 1, cov="unscaled")
    slope = coeffs[0]
    resid = logd - np.polyval(coeffs, q)
    goodness = _self_calibrated_chi2(q, resid, 2)
    sigma = math.sqrt(max(np.mean(np.diff(resid, 2) ** 2) / 6.0, 1e-30))
    accepted = goodness <= 5.0 and slope < 0
    ell = -1.0 / slope if slope < 0 else np.nan
    ell_err = (abs(sigma * math.sqrt(max(cov[0, 0], 0.0)) / slope**2)
               if slope < 0 else np.nan)
    return LocalizationFit(
        ell=ell, ell_err=ell_err, fit_window=(float(q[0]), float(q[-1])),
        goodness=goodness, accepted=accepted,
    )


@dataclass(frozen=True)
class GaussianFit:
    sigma: float
    sigma_err: float
    goodness: float
    accepted: bool


def fit_gaussian_shape(distribution: Distribution, q_min: float = 0.0
                       ) -> GaussianFit:
    """Weighted linear fit of log-density vs p^2 (Gaussian test)."""
    q, logd = _folded_log_density(distribution, q_min)
    if len(q) < 4:
        return GaussianFit(np.nan, np.nan, np.inf, False)
    coeffs, cov = np.polyfit(q**2, logd, 1, cov="unscaled")
    slope = coeffs[0]
    resid = logd - np.polyval(coeffs, q**2)
    goodness = _self_calibrated_chi2(q**2, resid, 2)
    noise = math.sqrt(max(np.mean(np.diff(resid, 2) ** 2) / 6.0, 1e-30))
    accepted = goodness <= 5.0 and slope < 0
    if slope < 0:
        sigma = math.sqrt(-0.5 / slope)
        # sigma = sqrt(-1/(2s)) so dsigma/ds = 1/(4 sigma s^2)
        sigma_err = (noise * math.sqrt(max(cov[0, 0], 0.0))
                     / (4.0 * sigma * slope**2))
    else:
        sigma = sigma_err = np.nan
    return GaussianFit(sigma=sigma, sigma_err=sigma_err,
                       goodness=goodness, accepted=accepted)


# --------------------------------------------------------------------------
# Lambda = <p2> t^(-2/3) and power-law fits
# --------------------------------------------------------------------------

def lambda_series(series: EnsembleSeries, *, use_pi0: bool = False
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (t, Lambda, sigma_Lambda) with Lambda = <p2> * t^(-2/3).

    With use_pi0=True the experimental variant 1/(Pi0^2 t^(2/3)) is used
    instead (requires the pi0 column).
    """
    t = series.times.astype(float)
    if np.any(t <= 0):
        raise ParameterError("lambda_series requires strictly positive times")
    scale = t ** (-TWO_THIRDS)
    if use_pi0:
        if series.pi0 is None or np.any(~np.isfinite(series.pi0)):
            raise ParameterError("pi0 column missing; call attach_pi0 first")
        lam = scale / series.pi0**2
        # sem of pi0 is not tracked; propagate the p2 relative error
        sig = lam * (series.p2_sem / series.p2_mean)
    else:
        lam = series.p2_mean * scale
        sig = series.p2_sem * scale
    return series.times.copy(), lam, sig


def p2_from_lambda(times: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Exact inverse of the Lambda transform."""
    return lam * np.asarray(times, dtype=float) ** TWO_THIRDS


@dataclass(frozen=True)
class AnomalousFit:
    """Log-log power-law fit <p2> ~ t^k over a time window."""

    k: float
    k_err: float
    window: tuple[int, int]
    curvature: float
    curvature_err: float
    curved: bool  # quadratic log-log coefficient significant at 3 sigma
    offset: float | None = None  # A in the form A + B t^(2/3), if requested
    prefactor: float | None = None


def fit_anomalous_diffusion(series: EnsembleSeries,
                            window: tuple[float, float],
                            *, offset_form: bool = False) -> AnomalousFit:
    """Weighted log-log regression of <p2> vs t within `window`.

    The window must span at least 1.5 decades.  A significant quadratic
    coefficient in log-log marks curvature (off-critical bending).  With
    offset_form=True also fits <p2> = A + B t^(2/3) and reports (A, B).
    """
    lo, hi = window
    if hi / lo < 10**1.5:
        raise ParameterError(
            f"window {window} spans less than 1.5 decades")
    sel = (series.times >= lo) & (series.times <= hi)
    if np.count_nonzero(sel) < 4:
        raise ParameterError("too few recorded times inside the window")
    t = series.times[sel].astype(float)
    p2 = series.p2_mean[sel]
    sem = series.p2_sem[sel]
    x = np.log(t)
    y = np.log(p2)
    sigma = np.clip(sem / p2, 1e-12, None)
    w = 1.0 / sigma
    coeffs, cov = np.polyfit(x, y, 1, w=w, cov="unscaled")
    k, k_err = coeffs[0], math.sqrt(max(cov[0, 0], 0.0))
    quad, qcov = np.polyfit(x, y, 2, w=w, cov="unscaled")
    c2, c2_err = quad[0], math.sqrt(max(qcov[0, 0], 0.0))
    offset = prefactor = None
    if offset_form:
        X = np.stack([np.ones_like(t), t**TWO_THIRDS], axis=1)
        w_lin = 1.0 / np.clip(sem, 1e-12, None)
        sol, *_ = np.linalg.lstsq(X * w_lin[:, None], p2 * w_lin, rcond=None)
        offset, prefactor = float(sol[0]), float(sol[1])
    return AnomalousFit(
        k=float(k), k_err=float(k_err), window=(int(lo), int(hi)),
        curvature=float(c2), curvature_err=float(c2_err),
        curved=abs(c2) > 3.0 * c2_err,
        offset=offset, prefactor=prefactor,
    )


# --------------------------------------------------------------------------
# Localization time
# --------------------------------------------------------------------------

def localization_time_from_diffusion(D_p: float) -> float:
    """tau_loc = D/2 for a diffusion constant D in p^2 (not p-frak^2) units."""
    if D_p <= 0:
        raise ParameterError("diffusion constant must be positive")
    return D_p / 2.0


@dataclass(frozen=True)
class LocalizationTimeEstimate:
    tau_loc: float
    D_pfrak: float
    D_err: float
    kam_limited: bool


def localization_time_estimate(params: RotorParams, *, n_traj: int = 20_000,
                               t_max: int = 200, seed: int = 2024,
                               ) -> LocalizationTimeEstimate:
    """Classical estimate of the localization time tau_loc = D/2.

    The Monte-Carlo diffusion constant is measured in p-frak^2 per kick and
    converted to p^2 units (factor kbar^2) before halving, which is the
    scale on which the quantum break time is counted in kicks.
    """
    from . import classical  # runtime import; classical depends on this module

    est = classical.classical_diffusion_constant(
        params, n_traj=n_traj, t_max=t_max, seed=seed)
    tau = localization_time_from_diffusion(params.kbar**2 * est.D)
    return LocalizationTimeEstimate(
        tau_loc=tau, D_pfrak=est.D, D_err=est.D_err,
        kam_limited=est.kam_limited,
    )
