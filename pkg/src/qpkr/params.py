"""Dimensionless kicked-rotor parameters, unit conversion, and sweep paths.

All dynamical quantities are expressed in scaled units: momentum in units
of 2*hbar*kL (written p-frak), position in units of 1/(2*kL), time in kick
periods.  The effective Planck constant is kbar = 4*hbar*kL^2*T1/M and the
stochasticity parameter K controls classical chaos.
"""

from __future__ import annotations

import configparser
import math
import warnings
from dataclasses import dataclass, field, replace

HBAR = 1.054571817e-34  # J s
GRAVITY = 9.81  # m s^-2

TWO_PI = 2.0 * math.pi

#: Golden mean, used by some quasiperiodic frequency choices.
GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


class DipoleApproximationWarning(UserWarning):
    """Raised when |DeltaL|/Gamma < 100 and the dipole-potential model
    underlying the scaled units becomes questionable."""


def _check(cond: bool, msg: str) -> None:
    from .errors import ParameterError

    if not cond:
        raise ParameterError(msg)


@dataclass(frozen=True)
class RotorParams:
    """Control parameters of the (quasi)periodically kicked rotor.

    The kick sequence is K(t) = K*[1 + epsilon*cos(omega2*t + phi2)
    *cos(omega3*t + phi3)] at integer kick index t.  omega2, omega3 are in
    radians per kick period.  eta_se is the spontaneous-emission rate in
    events per kick, eta_g the gravity-induced momentum drift per kick
    (in units of 2*hbar*kL).
    """

    K: float = 6.4
    kbar: float = 2.85
    epsilon: float = 0.436
    omega2: float = TWO_PI * math.sqrt(5.0)
    omega3: float = TWO_PI * math.sqrt(13.0)
    phi2: float = 0.0
    phi3: float = 0.0
    eta_se: float = 0.0
    eta_g: float = 0.0

    def __post_init__(self):
        _check(math.isfinite(self.K) and self.K > 0, f"K must be > 0, got {self.K}")
        _check(math.isfinite(self.kbar) and self.kbar > 0,
               f"kbar must be > 0, got {self.kbar}")
        _check(0.0 <= self.epsilon <= 1.0,
               f"epsilon must lie in [0, 1], got {self.epsilon}")
        for name in ("omega2", "omega3", "phi2", "phi3"):
            _check(math.isfinite(getattr(self, name)), f"{name} must be finite")
        _check(0.0 <= self.eta_se <= 1.0,
               f"eta_se is a per-kick probability, got {self.eta_se}")
        _check(self.eta_g >= 0.0, f"eta_g must be >= 0, got {self.eta_g}")

    def with_phases(self, phi2: float, phi3: float) -> "RotorParams":
        return replace(self, phi2=phi2 % TWO_PI, phi3=phi3 % TWO_PI)


@dataclass(frozen=True)
class PhysicalParams:
    """Laboratory parameters of a standing-wave pulsed optical lattice.

    Defaults describe a cesium D2-line experiment: kick frequency 36 kHz,
    900 ns square pulses, 7.3 GHz red detuning.  DeltaL is entered as a
    magnitude; the sign convention is absorbed into K.
    """

    T1: float = 1.0 / 36e3  # kick period (s)
    tau: float = 900e-9  # pulse duration (s)
    Omega: float = 1.456e9  # resonant Rabi frequency (rad/s)
    DeltaL: float = TWO_PI * 7.3e9  # |detuning| (rad/s)
    kL: float = TWO_PI / 852.35e-9  # laser wavenumber (1/m)
    M: float = 2.20695e-25  # atomic mass (kg)
    Gamma: float = 2.0 * math.pi * 5.234e6  # natural linewidth (rad/s)
    alpha_tilt: float = 0.0  # standing-wave tilt from horizontal (rad)

    def __post_init__(self):
        for name in ("T1", "tau", "Omega", "DeltaL", "kL", "M", "Gamma"):
            v = getattr(self, name)
            _check(math.isfinite(v) and v > 0, f"{name} must be > 0, got {v}")
        _check(math.isfinite(self.alpha_tilt), "alpha_tilt must be finite")
        _check(self.tau < self.T1,
               f"tau ({self.tau}) must be < T1 ({self.T1}): "
               "the delta-kick approximation requires short pulses")


def physical_to_scaled(
    p: PhysicalParams,
    *,
    epsilon: float = 0.0,
    omega2: float = TWO_PI * math.sqrt(5.0),
    omega3: float = TWO_PI * math.sqrt(13.0),
    phi2: float = 0.0,
    phi3: float = 0.0,
) -> RotorParams:
    """Convert laboratory parameters to dimensionless rotor parameters.

    K     = hbar * Omega^2 * T1 * tau * kL^2 / (2 M DeltaL)
    kbar  = 4 hbar kL^2 T1 / M
    eta_se = Gamma Omega^2 tau / (8 DeltaL^2)
    eta_g = (M g T1 / 2 hbar kL) * kbar * sin(alpha_tilt)

    The modulation (epsilon, omega2, omega3, phases) is a drive choice, not
    a property of the beam, so it is passed through unchanged.  Emits
    DipoleApproximationWarning when |DeltaL|/Gamma < 100.
    """
    if p.DeltaL / p.Gamma < 100.0:
        warnings.warn(
            f"|DeltaL|/Gamma = {p.DeltaL / p.Gamma:.1f} < 100; "
            "the far-detuned dipole potential model is marginal",
            DipoleApproximationWarning,
            stacklevel=2,
        )
    K = HBAR * p.Omega**2 * p.T1 * p.tau * p.kL**2 / (2.0 * p.M * p.DeltaL)
    kbar = 4.0 * HBAR * p.kL**2 * p.T1 / p.M
    eta_se = p.Gamma * p.Omega**2 * p.tau / (8.0 * p.DeltaL**2)
    eta_g = (p.M * GRAVITY * p.T1 / (2.0 * HBAR * p.kL)) * kbar * abs(
        math.sin(p.alpha_tilt)
    )
    return RotorParams(
        K=K,
        kbar=kbar,
        epsilon=epsilon,
        omega2=omega2,
        omega3=omega3,
        phi2=phi2,
        phi3=phi3,
        eta_se=eta_se,
        eta_g=eta_g,
    )


def kick_strength(params: RotorParams, t):
    """Kick amplitude K(t) at integer kick index t (scalar or array).

    K(t) = K * [1 + epsilon*cos(omega2 t + phi2)*cos(omega3 t + phi3)];
    bounded in [K(1-epsilon), K(1+epsilon)] for all t.
    """
    import numpy as np

    t = np.asarray(t)
    mod = 1.0 + params.epsilon * np.cos(params.omega2 * t + params.phi2) * np.cos(
        params.omega3 * t + params.phi3
    )
    out = params.K * mod
    return float(out) if out.ndim == 0 else out


def log_schedule(t_min: int, t_max: int, points_per_decade: int = 10):
    """Integer record times, log-spaced with roughly points_per_decade per
    decade, deduplicated, always containing t_min and t_max."""
    import numpy as np

    _check(1 <= t_min <= t_max, f"need 1 <= t_min <= t_max, got ({t_min}, {t_max})")
    _check(points_per_decade >= 1, "points_per_decade must be >= 1")
    if t_min == t_max:
        return np.array([t_min], dtype=np.int64)
    n = max(2, int(round(math.log10(t_max / t_min) * points_per_decade)) + 1)
    grid = np.geomspace(t_min, t_max, n)
    times = np.unique(np.rint(grid).astype(np.int64))
    times[0], times[-1] = t_min, t_max
    return np.unique(times)


@dataclass(frozen=True)
class SweepPath:
    """Straight segment in the (K, epsilon) plane, sampled evenly.

    Point i has K_i = k_start + i*(k_end - k_start)/(n_points - 1) and the
    matching epsilon_i.  A single-point path (n_points = 1) degenerates to
    the start point.
    """

    k_start: float
    k_end: float
    eps_start: float
    eps_end: float
    n_points: int

    def __post_init__(self):
        _check(int(self.n_points) == self.n_points and self.n_points >= 1,
               f"n_points must be a positive integer, got {self.n_points}")
        for name in ("k_start", "k_end"):
            _check(getattr(self, name) > 0, f"{name} must be > 0")
        for name in ("eps_start", "eps_end"):
            v = getattr(self, name)
            _check(0.0 <= v <= 1.0, f"{name} must lie in [0, 1], got {v}")

    def points(self) -> list[tuple[float, float]]:
        if self.n_points == 1:
            return [(self.k_start, self.eps_start)]
        out = []
        for i in range(self.n_points):
            f = i / (self.n_points - 1)
            out.append(
                (
                    self.k_start + f * (self.k_end - self.k_start),
                    self.eps_start + f * (self.eps_end - self.eps_start),
                )
            )
        return out

    def epsilon_at(self, K: float) -> float:
        """Epsilon on the (extended) segment at stochasticity K."""
        if self.k_end == self.k_start:
            return self.eps_start
        f = (K - self.k_start) / (self.k_end - self.k_start)
        return self.eps_start + f * (self.eps_end - self.eps_start)


#: The experimental transition-crossing line.
EXPERIMENTAL_PATH = SweepPath(
    k_start=4.0, k_end=9.0, eps_start=0.1, eps_end=0.8, n_points=20
)


# --------------------------------------------------------------------------
# Configuration files
#
# INI-style key/value files with one section per parameter group.  Every
# field has a default; unknown keys are rejected so typos fail loudly.
# --------------------------------------------------------------------------

_SCHEMAS: dict[str, dict[str, type]] = {
    "rotor": {
        "k": float, "kbar": float, "epsilon": float,
        "omega2": float, "omega3": float, "phi2": float, "phi3": float,
        "eta_se": float, "eta_g": float,
    },
    "physical": {
        "t1": float, "tau": float, "omega": float, "deltal": float,
        "kl": float, "m": float, "gamma": float, "alpha_tilt": float,
    },
    "ensemble": {
        "n_traj": int, "seed": int, "initial_kind": str,
        "thermal_fwhm": float, "beta_sampling": str, "beta0": float,
        "phase_sampling": str,
    },
    "grid": {"n": int, "auto": bool},
    "schedule": {
        "t_max": int, "t_min": int, "points_per_decade": int,
        "record_times": str,
    },
    "sweep": {
        "k_start": float, "k_end": float, "eps_start": float,
        "eps_end": float, "n_points": int,
    },
    "scaling": {
        "t_min": int, "n_r": int, "n_i": int, "m_r": int,
        "n_resamples": int,
    },
    "output": {"dir": str},
}

CONFIG_DEFAULTS: dict[str, dict] = {
    "rotor": {
        "k": RotorParams.K, "kbar": RotorParams.kbar,
        "epsilon": RotorParams.epsilon,
        "omega2": RotorParams.omega2, "omega3": RotorParams.omega3,
        "phi2": 0.0, "phi3": 0.0, "eta_se": 0.0, "eta_g": 0.0,
    },
    "physical": {
        "t1": PhysicalParams.T1, "tau": PhysicalParams.tau,
        "omega": PhysicalParams.Omega, "deltal": PhysicalParams.DeltaL,
        "kl": PhysicalParams.kL, "m": PhysicalParams.M,
        "gamma": PhysicalParams.Gamma, "alpha_tilt": 0.0,
    },
    "ensemble": {
        "n_traj": 200, "seed": 1, "initial_kind": "plane_zero",
        "thermal_fwhm": 4.0, "beta_sampling": "uniform", "beta0": 0.0,
        "phase_sampling": "uniform",
    },
    "grid": {"n": 2048, "auto": True},
    "schedule": {
        "t_max": 10_000, "t_min": 30, "points_per_decade": 10,
        "record_times": "",
    },
    "sweep": {
        "k_start": 4.0, "k_end": 9.0, "eps_start": 0.1, "eps_end": 0.8,
        "n_points": 20,
    },
    "scaling": {"t_min": 30, "n_r": 3, "n_i": 1, "m_r": 2, "n_resamples": 200},
    "output": {"dir": "runs"},
}


def load_config(path: str | None = None, overrides: dict | None = None) -> dict:
    """Read an INI config file and merge it over the documented defaults.

    `overrides` is a {section: {key: value}} mapping applied last (used for
    CLI flag overrides).  Returns a plain nested dict of typed values.
    """
    from .errors import ParameterError

    out = {sec: dict(vals) for sec, vals in CONFIG_DEFAULTS.items()}
    if path is not None:
        cp = configparser.ConfigParser()
        read = cp.read(path)
        if not read:
            raise ParameterError(f"config file not found: {path}")
        for sec in cp.sections():
            if sec not in _SCHEMAS:
                raise ParameterError(f"unknown config section [{sec}]")
            for key, raw in cp.items(sec):
                if key not in _SCHEMAS[sec]:
                    raise ParameterError(f"unknown config key {sec}.{key}")
                out[sec][key] = _parse_value(sec, key, raw)
    for sec, vals in (overrides or {}).items():
        for key, value in vals.items():
            if value is not None:
                out.setdefault(sec, {})[key] = value
    return out


def _parse_value(sec: str, key: str, raw: str):
    from .errors import ParameterError

    typ = _SCHEMAS[sec][key]
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ParameterError(
            f"config value {sec}.{key} = {raw!r} is not a valid {typ.__name__}"
        ) from exc


def rotor_from_config(cfg: dict) -> RotorParams:
    r = cfg["rotor"]
    return RotorParams(
        K=r["k"], kbar=r["kbar"], epsilon=r["epsilon"],
        omega2=r["omega2"], omega3=r["omega3"],
        phi2=r["phi2"], phi3=r["phi3"],
        eta_se=r["eta_se"], eta_g=r["eta_g"],
    )


def sweep_from_config(cfg: dict) -> SweepPath:
    s = cfg["sweep"]
    return SweepPath(
        k_start=s["k_start"], k_end=s["k_end"],
        eps_start=s["eps_start"], eps_end=s["eps_end"],
        n_points=s["n_points"],
    )


def format_rotor_params(params: RotorParams) -> str:
    """Human-readable one-per-line dump, printed by the CLI before runs."""
    lines = ["resolved rotor parameters:"]
    for name in ("K", "kbar", "epsilon", "omega2", "omega3",
                 "phi2", "phi3", "eta_se", "eta_g"):
        lines.append(f"  {name:<8} = {getattr(params, name):.12g}")
    return "\n".join(lines)
