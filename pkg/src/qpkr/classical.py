"""Classical Standard Map and its 3-frequency quasiperiodic extension.

These ensembles provide the diffusive baseline: the quantum rotor follows
the classical <p2> growth up to the localization time, so the classical
diffusion constant sets both the expected slope and tau_loc = D/2.

Units: the map momentum p is in "p units" (p = kbar * pfrak); reported
series are converted to pfrak^2 so they share the quantum record schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .observables import Distribution, EnsembleSeries
from .params import TWO_PI, RotorParams, log_schedule


@dataclass
class ClassicalState:
    """Ensemble of classical rotor states.

    x is the rotor angle, p its momentum (p units, never wrapped); x2/x3
    are the phase angles of the two extra drive frequencies and p2/p3
    their conjugate momenta (only meaningful for the 3D map view).
    """

    x: np.ndarray
    p: np.ndarray
    x2: np.ndarray | None = None
    x3: np.ndarray | None = None
    p2: np.ndarray | None = None
    p3: np.ndarray | None = None
    t: int = 0

    def __post_init__(self):
        self.x = np.mod(np.asarray(self.x, dtype=float), TWO_PI)
        self.p = np.asarray(self.p, dtype=float)
        if self.x.shape != self.p.shape:
            raise ParameterError("x and p must share a shape")
        for name in ("x2", "x3", "p2", "p3"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != self.x.shape:
                    raise ParameterError(f"{name} shape mismatch")
                if name in ("x2", "x3"):
                    v = np.mod(v, TWO_PI)
                setattr(self, name, v)


def standard_map_step(state: ClassicalState, K: float) -> ClassicalState:
    """One Standard-Map step, in place: x' = (x+p) mod 2pi, p' = p + K sin x'."""
    state.x += state.p
    np.mod(state.x, TWO_PI, out=state.x)
    state.p += K * np.sin(state.x)
    state.t += 1
    return state


def quasiperiodic_classical_step(state: ClassicalState, params: RotorParams,
                                 t: int) -> ClassicalState:
    """One step of the quasiperiodically driven map, in place.

    x' = (x+p) mod 2pi, p' = p + kick_strength(params, t) * sin x'.  The
    drive angles x2/x3 advance by omega2/omega3; when p2/p3 are tracked the
    conjugate kicks of the equivalent 3D rotor are applied with the same
    angles, so per-axis diffusion can be read off.  t must be the step
    counter (state.t) for the drive phase to stay consistent with x2/x3.
    """
    state.x += state.p
    np.mod(state.x, TWO_PI, out=state.x)
    c2 = math.cos(params.omega2 * t + params.phi2)
    c3 = math.cos(params.omega3 * t + params.phi3)
    amp = params.K * (1.0 + params.epsilon * c2 * c3)
    sinx = np.sin(state.x)
    state.p += amp * sinx
    if state.p2 is not None:
        s2 = math.sin(params.omega2 * t + params.phi2)
        s3 = math.sin(params.omega3 * t + params.phi3)
        cosx = np.cos(state.x)
        state.p2 += params.K * params.epsilon * cosx * s2 * c3
        state.p3 += params.K * params.epsilon * cosx * c2 * s3
    if state.x2 is not None:
        state.x2 += params.omega2
        np.mod(state.x2, TWO_PI, out=state.x2)
    if state.x3 is not None:
        state.x3 += params.omega3
        np.mod(state.x3, TWO_PI, out=state.x3)
    state.t += 1
    return state


# --------------------------------------------------------------------------
# Ensembles
# --------------------------------------------------------------------------

def _initial_ensemble(params: RotorParams, n_traj: int, rng,
                      initial_kind: str, thermal_fwhm: float,
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Draw (x, p) start values; draw order is fixed: x then p."""
    x = rng.uniform(0.0, TWO_PI, n_traj)
    if initial_kind == "thermal":
        sigma = params.kbar * thermal_fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        p = rng.normal(0.0, sigma, n_traj)
    elif initial_kind == "plane_zero":
        # mirrors the quantum plane-wave ensemble: pfrak = beta uniform in [0,1)
        p = params.kbar * rng.random(n_traj)
    else:
        raise ParameterError(f"unknown initial_kind {initial_kind!r}")
    return x, p


def evolve_classical_ensemble(params: RotorParams, *, n_traj: int,
                              t_max: int, seed: int,
                              points_per_decade: int = 10,
                              record_times: np.ndarray | None = None,
                              initial_kind: str = "thermal",
                              thermal_fwhm: float = 4.0,
                              phase_sampling: str = "uniform",
                              distribution_times: tuple[int, ...] = (),
                              ) -> EnsembleSeries:
    """Run a trajectory ensemble of the driven 1D map.

    phase_sampling "uniform" draws independent (phi2, phi3) per trajectory;
    "fixed" uses the pair stored in params for every trajectory.  Returns an
    EnsembleSeries in pfrak units with source="classical".
    """
    if t_max < 1:
        raise ParameterError("t_max must be >= 1")
    rng = np.random.default_rng(np.random.Philox(key=np.uint64(seed)))
    x, p = _initial_ensemble(params, n_traj, rng, initial_kind, thermal_fwhm)
    if phase_sampling == "uniform":
        phi2 = rng.uniform(0.0, TWO_PI, n_traj)
        phi3 = rng.uniform(0.0, TWO_PI, n_traj)
    elif phase_sampling == "fixed":
        phi2 = np.full(n_traj, params.phi2)
        phi3 = np.full(n_traj, params.phi3)
    else:
        raise ParameterError(f"unknown phase_sampling {phase_sampling!r}")

    if record_times is None:
        record_times = log_schedule(1, t_max, points_per_decade)
    record_times = np.unique(np.asarray(record_times, dtype=np.int64))
    if record_times[0] < 1 or record_times[-1] > t_max:
        raise ParameterError("record times must lie in [1, t_max]")
    record_set = {int(t): i for i, t in enumerate(record_times)}
    dist_wanted = set(int(t) for t in distribution_times)

    K, eps, w2, w3 = params.K, params.epsilon, params.omega2, params.omega3
    kb2 = params.kbar**2
    p2_mean = np.empty(len(record_times))
    p2_sem = np.empty(len(record_times))
    distributions: dict[int, Distribution] = {}
    for t in range(t_max):
        x += p
        np.mod(x, TWO_PI, out=x)
        amp = K * (1.0 + eps * np.cos(w2 * t + phi2) * np.cos(w3 * t + phi3))
        p += amp * np.sin(x)
        tn = t + 1
        if tn in record_set:
            i = record_set[tn]
            pf2 = p * p / kb2
            p2_mean[i] = pf2.mean()
            p2_sem[i] = pf2.std(ddof=1) / math.sqrt(n_traj)
            if tn in dist_wanted:
                distributions[tn] = _histogram_pfrak(p / params.kbar)
    return EnsembleSeries(
        params=params, times=record_times, p2_mean=p2_mean, p2_sem=p2_sem,
        n_traj=n_traj, distributions=distributions, source="classical",
    )


def _histogram_pfrak(pfrak: np.ndarray) -> Distribution:
    """Bin momenta onto the integer lattice (unit-width bins)."""
    k = np.rint(pfrak).astype(np.int64)
    kmin, kmax = int(k.min()), int(k.max())
    counts = np.bincount(k - kmin, minlength=kmax - kmin + 1)
    centers = np.arange(kmin, kmax + 1, dtype=float)
    return Distribution(p=centers, density=counts / len(pfrak))


@dataclass(frozen=True)
class DiffusionEstimate:
    D: float           # pfrak^2 per kick
    D_err: float
    exponent: float    # log-log slope over the fit window
    kam_limited: bool  # exponent < 0.9: below the chaos threshold


def classical_diffusion_constant(params: RotorParams, *, n_traj: int = 100_000,
                                 t_max: int = 1000, seed: int = 7,
                                 initial_kind: str = "thermal",
                                 thermal_fwhm: float = 4.0,
                                 ) -> DiffusionEstimate:
    """Least-squares slope of <pfrak^2> vs t over the second half of the run.

    Sub-linear growth (log-log exponent < 0.9 over the same window) raises
    the kam_limited flag: K is below the chaos threshold and a single
    diffusion constant is meaningless.
    """
    if t_max < 100:
        raise ParameterError("t_max must be >= 100")
    rng = np.random.default_rng(np.random.Philox(key=np.uint64(seed)))
    x, p = _initial_ensemble(params, n_traj, rng, initial_kind, thermal_fwhm)
    phi2 = rng.uniform(0.0, TWO_PI, n_traj)
    phi3 = rng.uniform(0.0, TWO_PI, n_traj)
    K, eps, w2, w3 = params.K, params.epsilon, params.omega2, params.omega3
    kb2 = params.kbar**2
    p0 = p.copy()
    mean_dp2 = np.empty(t_max)
    for t in range(t_max):
        x += p
        np.mod(x, TWO_PI, out=x)
        amp = K * (1.0 + eps * np.cos(w2 * t + phi2) * np.cos(w3 * t + phi3))
        p += amp * np.sin(x)
        d = p - p0
        mean_dp2[t] = np.dot(d, d) / (n_traj * kb2)
    ts = np.arange(1, t_max + 1, dtype=float)
    half = t_max // 2
    tw, yw = ts[half:], mean_dp2[half:]
    coeffs, cov = np.polyfit(tw, yw, 1, cov=True)
    D, D_err = float(coeffs[0]), float(math.sqrt(max(cov[0, 0], 0.0)))
    lcoef = np.polyfit(np.log(tw), np.log(np.clip(yw, 1e-300, None)), 1)
    exponent = float(lcoef[0])
    return DiffusionEstimate(D=D, D_err=D_err, exponent=exponent,
                             kam_limited=exponent < 0.9)


@dataclass(frozen=True)
class AnisotropicDiffusion:
    """Per-axis diffusion constants of the 3D map (pfrak^2 per kick for the
    rotor axis; the drive axes use their own conjugate momenta)."""

    times: np.ndarray
    dp1_sq: np.ndarray
    dp2_sq: np.ndarray
    dp3_sq: np.ndarray
    D1: float
    D2: float
    D3: float
    D1_err: float
    D2_err: float
    D3_err: float
    final_p1: Distribution


def evolve_classical_3d(params: RotorParams, *, n_traj: int, t_max: int,
                        seed: int, thermal_fwhm: float = 4.0,
                        ) -> AnisotropicDiffusion:
    """Full 3D map ensemble tracking all three momenta.

    The rotor axis diffuses with the full kick; the drive axes pick up only
    the epsilon-suppressed conjugate kicks, so D1 > D2 = D3 (the drive
    frequencies enter p2/p3 symmetrically).
    """
    rng = np.random.default_rng(np.random.Philox(key=np.uint64(seed)))
    x, p = _initial_ensemble(params, n_traj, rng, "thermal", thermal_fwhm)
    x2 = rng.uniform(0.0, TWO_PI, n_traj)
    x3 = rng.uniform(0.0, TWO_PI, n_traj)
    state = ClassicalState(x=x, p=p, x2=x2, x3=x3,
                           p2=np.zeros(n_traj), p3=np.zeros(n_traj))
    # the per-trajectory drive phase is the initial angle; fold it into params
    base = params
    p0 = state.p.copy()
    times = log_schedule(1, t_max, 10)
    rec = {int(t): i for i, t in enumerate(times)}
    kb2 = params.kbar**2
    d1 = np.empty(len(times))
    d2 = np.empty(len(times))
    d3 = np.empty(len(times))
    K, eps, w2, w3 = base.K, base.epsilon, base.omega2, base.omega3
    for t in range(t_max):
        state.x += state.p
        np.mod(state.x, TWO_PI, out=state.x)
        c2, s2 = np.cos(state.x2), np.sin(state.x2)
        c3, s3 = np.cos(state.x3), np.sin(state.x3)
        sinx = np.sin(state.x)
        cosx = np.cos(state.x)
        state.p += K * (1.0 + eps * c2 * c3) * sinx
        state.p2 += K * eps * cosx * s2 * c3
        state.p3 += K * eps * cosx * c2 * s3
        state.x2 += w2
        np.mod(state.x2, TWO_PI, out=state.x2)
        state.x3 += w3
        np.mod(state.x3, TWO_PI, out=state.x3)
        state.t += 1
        tn = t + 1
        if tn in rec:
            i = rec[tn]
            d1[i] = np.mean((state.p - p0) ** 2) / kb2
            d2[i] = np.mean(state.p2**2) / kb2
            d3[i] = np.mean(state.p3**2) / kb2

    def _slope(y):
        half = len(times) // 2
        c, cov = np.polyfit(times[half:].astype(float), y[half:], 1, cov=True)
        return float(c[0]), float(math.sqrt(max(cov[0, 0], 0.0)))

    D1, e1 = _slope(d1)
    D2, e2 = _slope(d2)
    D3, e3 = _slope(d3)
    return AnisotropicDiffusion(
        times=times, dp1_sq=d1, dp2_sq=d2, dp3_sq=d3,
        D1=D1, D2=D2, D3=D3, D1_err=e1, D2_err=e2, D3_err=e3,
        final_p1=_histogram_pfrak((state.p - p0) / params.kbar),
    )
