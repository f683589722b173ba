"""Tight-binding (Anderson) representation of the kicked rotor.

The one-period quantum dynamics maps onto a lattice eigenproblem with
tangent on-site energies eps_m = tan[(omega - m^2 kbar/2)/2] and hopping
amplitudes W_r given by the Fourier coefficients of tan[K cos x/(2 kbar)].
The quasiperiodically kicked rotor maps the same way onto a 3D lattice
whose axes 2 and 3 carry the phases of the two modulation frequencies.

The construction is exact but only useful while the tangent kernel is
bounded, i.e. K(1+eps) < pi*kbar; beyond that raising SingularKickError
is the honest answer, the expansion does not exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ParameterError, SingularKickError
from .params import RotorParams

POLE_TOL = 1e-6          # |tan argument mod pi - pi/2| below this flags a pole
IMAG_TOL = 1e-10         # Fourier coefficients must be real to this level
MIN_KERNEL_SAMPLES = 1 << 14


def _index_axis(spec) -> np.ndarray:
    """An index axis is either an explicit integer array or a length n,
    which is expanded to the centered range [-n//2, n - n//2)."""
    if np.isscalar(spec):
        n = int(spec)
        if n < 1:
            raise ParameterError("index box length must be >= 1")
        return np.arange(n, dtype=np.int64) - n // 2
    axis = np.asarray(spec, dtype=np.int64)
    if axis.ndim != 1 or axis.size == 0:
        raise ParameterError("index axis must be a non-empty 1D array")
    return axis


def _pole_distance(arg: np.ndarray) -> np.ndarray:
    # distance of the tan argument from the nearest pole at pi/2 + k*pi
    return np.abs(np.mod(arg, np.pi) - np.pi / 2)


@dataclass(frozen=True)
class OnsiteEnergies:
    """Tangent on-site energies over a finite index box.

    `axes` holds one integer index array per dimension; `values` has the
    matching shape.  Pole sites (tangent argument within POLE_TOL of
    pi/2 mod pi) are flagged, not regularized: the values there are the
    floating-point tangent and must not enter statistics.
    """

    axes: tuple
    values: np.ndarray
    pole_mask: np.ndarray
    omega: float
    kbar: float

    def __post_init__(self):
        shape = tuple(len(a) for a in self.axes)
        if self.values.shape != shape or self.pole_mask.shape != shape:
            raise ParameterError("onsite arrays must match the index box")

    @property
    def dimension(self) -> int:
        return len(self.axes)


def onsite_energies_1d(kbar: float, omega: float, m_range,
                       beta: float = 0.0) -> OnsiteEnergies:
    """eps_m = tan[(omega - (m+beta)^2 kbar/2)/2] on the given indices.

    beta shifts the momentum ladder off the integers (nonzero
    quasi-momentum); the default 0 reproduces the plain rotor mapping.
    """
    if kbar <= 0:
        raise ParameterError("kbar must be positive")
    m = _index_axis(m_range)
    arg = 0.5 * (omega - (m + beta) ** 2 * kbar / 2.0)
    return OnsiteEnergies(axes=(m,), values=np.tan(arg),
                          pole_mask=_pole_distance(arg) < POLE_TOL,
                          omega=float(omega), kbar=float(kbar))


def onsite_energies_3d(kbar: float, omega2: float, omega3: float,
                       omega: float, box, beta: float = 0.0
                       ) -> OnsiteEnergies:
    """eps_m = tan{[omega - (kbar m1^2/2 + omega2 m2 + omega3 m3)]/2}.

    `box` is a triple of index axes (arrays or lengths).  Axis 1 is the
    physical momentum, axes 2 and 3 index the modulation phases.
    """
    if kbar <= 0:
        raise ParameterError("kbar must be positive")
    try:
        s1, s2, s3 = box
    except (TypeError, ValueError):
        raise ParameterError("box must be a triple of index axes") from None
    m1 = _index_axis(s1)
    m2 = _index_axis(s2)
    m3 = _index_axis(s3)
    phase = (kbar * (m1 + beta) ** 2 / 2.0)[:, None, None] \
        + (omega2 * m2)[None, :, None] + (omega3 * m3)[None, None, :]
    arg = 0.5 * (omega - phase)
    return OnsiteEnergies(axes=(m1, m2, m3), values=np.tan(arg),
                          pole_mask=_pole_distance(arg) < POLE_TOL,
                          omega=float(omega), kbar=float(kbar))


@dataclass(frozen=True)
class HoppingCoefficients:
    """Fourier coefficients W_r of the tangent kick kernel.

    `offsets` holds one offset axis per dimension (symmetric around 0),
    `values` the real coefficients on that box.
    """

    offsets: tuple
    values: np.ndarray
    K: float
    epsilon: float
    kbar: float

    def __post_init__(self):
        shape = tuple(len(a) for a in self.offsets)
        if self.values.shape != shape:
            raise ParameterError("hopping array must match the offset box")

    @property
    def dimension(self) -> int:
        return len(self.offsets)

    def at(self, *r) -> float:
        """Coefficient at integer offset r (one index per dimension)."""
        if len(r) != len(self.offsets):
            raise ParameterError("offset arity must match dimension")
        idx = []
        for axis, ri in zip(self.offsets, r):
            pos = np.searchsorted(axis, ri)
            if pos >= len(axis) or axis[pos] != ri:
                raise ParameterError(f"offset {r} outside the stored box")
            idx.append(pos)
        return float(self.values[tuple(idx)])


def _check_kernel_bounded(K: float, epsilon: float, kbar: float) -> None:
    if K < 0 or not 0 <= epsilon:
        raise ParameterError("K and epsilon must be non-negative")
    if kbar <= 0:
        raise ParameterError("kbar must be positive")
    if K * (1.0 + epsilon) >= math.pi * kbar:
        raise SingularKickError(
            f"tan kernel reaches its pole: K(1+eps) = {K * (1 + epsilon):g}"
            f" >= pi*kbar = {math.pi * kbar:g}")


def _real_coefficients(c: np.ndarray) -> np.ndarray:
    worst = np.abs(c.imag).max()
    if worst >= IMAG_TOL:
        raise ParameterError(
            f"Fourier coefficients have imaginary part {worst:g};"
            " increase the sample count")
    return c.real.copy()


def _offset_take(c: np.ndarray, r_max: int, axis: int) -> np.ndarray:
    """Reorder FFT output so offset r in [-r_max, r_max] along `axis`."""
    idx = np.concatenate([np.arange(-r_max, 0) % c.shape[axis],
                          np.arange(0, r_max + 1)])
    return np.take(c, idx, axis=axis)


def hopping_coefficients_1d(K: float, kbar: float, r_max: int = 16,
                            n_samples: int = MIN_KERNEL_SAMPLES
                            ) -> HoppingCoefficients:
    """W_r = (1/2pi) int tan(K cos x/(2 kbar)) e^{-i r x} dx.

    Computed by a dense FFT of the sampled kernel; the integrand is even
    in x, so the coefficients are real with W_r = W_{-r}, and its
    antisymmetry under x -> pi - x kills every even harmonic including
    W_0.
    """
    _check_kernel_bounded(K, 0.0, kbar)
    r_max = int(r_max)
    if r_max < 0:
        raise ParameterError("r_max must be >= 0")
    n = int(n_samples)
    if n < MIN_KERNEL_SAMPLES:
        raise ParameterError(f"need at least {MIN_KERNEL_SAMPLES} samples")
    if 2 * r_max >= n:
        raise ParameterError("r_max must be below n_samples/2")
    x = 2.0 * np.pi * np.arange(n) / n
    kernel = np.tan(K * np.cos(x) / (2.0 * kbar))
    coeff = _offset_take(np.fft.fft(kernel) / n, r_max, axis=0)
    r = np.arange(-r_max, r_max + 1, dtype=np.int64)
    return HoppingCoefficients(offsets=(r,), values=_real_coefficients(coeff),
                               K=float(K), epsilon=0.0, kbar=float(kbar))


def hopping_coefficients_3d(K: float, epsilon: float, kbar: float,
                            r_max: int = 8, n_samples: int = 128
                            ) -> HoppingCoefficients:
    """Threefold Fourier coefficients of
    tan[K cos x1 (1 + eps cos x2 cos x3)/(2 kbar)].

    The kernel is analytic while K(1+eps) < pi*kbar, so its coefficients
    decay exponentially and 128 samples per axis hold aliasing far below
    IMAG_TOL.  At eps=0 the kernel drops the x2, x3 dependence and the
    coefficients factorize onto the 1D set at r2 = r3 = 0.
    """
    _check_kernel_bounded(K, epsilon, kbar)
    r_max = int(r_max)
    if r_max < 0:
        raise ParameterError("r_max must be >= 0")
    n = int(n_samples)
    if 2 * r_max >= n:
        raise ParameterError("r_max must be below n_samples/2")
    x = 2.0 * np.pi * np.arange(n) / n
    cos = np.cos(x)
    amp = 1.0 + epsilon * cos[None, :, None] * cos[None, None, :]
    kernel = np.tan(K * cos[:, None, None] * amp / (2.0 * kbar))
    coeff = np.fft.fftn(kernel) / n**3
    for axis in range(3):
        coeff = _offset_take(coeff, r_max, axis)
    r = np.arange(-r_max, r_max + 1, dtype=np.int64)
    return HoppingCoefficients(offsets=(r, r, r),
                               values=_real_coefficients(coeff),
                               K=float(K), epsilon=float(epsilon),
                               kbar=float(kbar))


def reconstruct_kernel(hopping: HoppingCoefficients, x: np.ndarray
                       ) -> np.ndarray:
    """Resum the 1D Fourier series at positions x (Parseval check)."""
    if hopping.dimension != 1:
        raise ParameterError("kernel resummation is defined in 1D")
    r = hopping.offsets[0][:, None].astype(float)
    series = hopping.values[:, None] * np.exp(1j * r * np.asarray(x)[None, :])
    return series.sum(axis=0).real


def hopping_decay_rate(hopping: HoppingCoefficients, r_lo: int = 3,
                       r_hi: int = 15) -> tuple[float, float]:
    """Exponential decay rate gamma of |W_r| ~ exp(-gamma r).

    Fits log|W_r| vs r over the odd offsets in [r_lo, r_hi] (even
    harmonics vanish identically); returns (gamma, standard error).
    """
    if hopping.dimension != 1:
        raise ParameterError("decay rate is defined for the 1D mapping")
    r_axis = hopping.offsets[0]
    sel = (r_axis >= r_lo) & (r_axis <= r_hi) & (r_axis % 2 == 1)
    r = r_axis[sel].astype(float)
    w = np.abs(hopping.values[sel])
    if r.size < 3:
        raise ParameterError(
            f"need at least 3 odd offsets in [{r_lo}, {r_hi}];"
            f" enlarge r_max")
    if np.any(w == 0):
        raise ParameterError("zero coefficient inside the decay window")
    coeffs, cov = np.polyfit(r, np.log(w), 1, cov=True)
    return -float(coeffs[0]), float(math.sqrt(max(cov[0, 0], 0.0)))


@dataclass(frozen=True)
class AndersonLattice:
    """On-site energies plus hopping coefficients of the mapped model."""

    dimension: int
    onsite: OnsiteEnergies
    hopping: HoppingCoefficients
    quasienergy: float

    def __post_init__(self):
        if self.dimension not in (1, 3):
            raise ParameterError("lattice dimension must be 1 or 3")
        if self.onsite.dimension != self.dimension \
                or self.hopping.dimension != self.dimension:
            raise ParameterError("onsite/hopping dimension mismatch")
        # real hopping keeps the implied Hamiltonian Hermitian
        if not np.isrealobj(self.hopping.values):
            raise ParameterError("hopping coefficients must be real")


def build_lattice_1d(params: RotorParams, m_range, omega: float = 0.0,
                     r_max: int = 16, beta: float = 0.0) -> AndersonLattice:
    return AndersonLattice(
        dimension=1,
        onsite=onsite_energies_1d(params.kbar, omega, m_range, beta=beta),
        hopping=hopping_coefficients_1d(params.K, params.kbar, r_max),
        quasienergy=float(omega))


def build_lattice_3d(params: RotorParams, box, omega: float = 0.0,
                     r_max: int = 8, beta: float = 0.0) -> AndersonLattice:
    return AndersonLattice(
        dimension=3,
        onsite=onsite_energies_3d(params.kbar, params.omega2, params.omega3,
                                  omega, box, beta=beta),
        hopping=hopping_coefficients_3d(params.K, params.epsilon,
                                        params.kbar, r_max),
        quasienergy=float(omega))


@dataclass(frozen=True)
class RationalApproximation:
    """Best rational p/q with q <= q_max for the ratio of two frequencies."""

    pair: tuple
    ratio: float
    numerator: int
    denominator: int
    error: float  # |ratio - p/q|


@dataclass(frozen=True)
class ResonanceFlag:
    """Integer combination n . (kbar, omega2, omega3, pi) within tol of 0."""

    coefficients: tuple
    residual: float


@dataclass(frozen=True)
class CommensurabilityReport:
    frequencies: dict
    pairs: tuple
    flags: tuple
    tol: float
    q_max: int

    @property
    def clean(self) -> bool:
        return len(self.flags) == 0


def commensurability_check(kbar: float, omega2: float, omega3: float,
                           tol: float = 1e-3, q_max: int = 20
                           ) -> CommensurabilityReport:
    """Diagnose near-commensurability of (kbar, omega2, omega3, pi).

    For every pair the best rational approximation with denominator
    <= q_max is reported; an exhaustive search over integer combinations
    with |coefficients| <= q_max flags |n1 kbar + n2 omega2 + n3 omega3
    + n4 pi| < tol.  Flags come out sign-canonical (first nonzero
    coefficient positive) and sorted by L1 norm, so the simplest
    resonance appears first.
    """
    if q_max < 2:
        raise ParameterError("q_max must be >= 2")
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if (2 * q_max + 1) ** 4 > 2 ** 28:
        raise ParameterError("q_max too large for the exhaustive search")
    freqs = {"kbar": float(kbar), "omega2": float(omega2),
             "omega3": float(omega3), "pi": math.pi}
    names = list(freqs)
    pairs = []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            ratio = freqs[names[i]] / freqs[names[j]]
            best = Fraction(ratio).limit_denominator(q_max)
            pairs.append(RationalApproximation(
                pair=(names[i], names[j]), ratio=ratio,
                numerator=best.numerator, denominator=best.denominator,
                error=abs(ratio - float(best))))

    ns = np.arange(-q_max, q_max + 1)
    vals = (ns[:, None, None, None] * freqs["kbar"]
            + ns[None, :, None, None] * freqs["omega2"]
            + ns[None, None, :, None] * freqs["omega3"]
            + ns[None, None, None, :] * math.pi)
    hits = np.argwhere(np.abs(vals) < tol)
    flags = []
    for h in hits:
        n = tuple(int(ns[i]) for i in h)
        if n == (0, 0, 0, 0):
            continue
        first = next(c for c in n if c != 0)
        if first < 0:
            continue  # keep one representative per +/- pair
        flags.append(ResonanceFlag(coefficients=n,
                                   residual=float(vals[tuple(h)])))
    flags.sort(key=lambda f: (sum(abs(c) for c in f.coefficients),
                              abs(f.residual)))
    return CommensurabilityReport(frequencies=freqs, pairs=tuple(pairs),
                                  flags=tuple(flags), tol=float(tol),
                                  q_max=int(q_max))


def period_search(kbar: float, max_period: int = 10_000,
                  tol: float = 1e-9) -> np.ndarray:
    """Exact periods p <= max_period of the sequence eps_m.

    eps_{m+p} = eps_m for all m and any omega iff kbar*p = 0 (mod 2pi)
    and kbar*p^2 = 0 (mod 4pi) (tan has period pi; the linear-in-m part
    of the argument difference forces the first congruence, the constant
    part the second).  Both residuals are checked numerically against
    tol, so rational kbar/2pi shows its period while irrational values
    return an empty array.
    """
    if max_period < 1:
        raise ParameterError("max_period must be >= 1")
    p = np.arange(1, int(max_period) + 1, dtype=float)
    r1 = np.mod(kbar * p, 2.0 * np.pi)
    r1 = np.minimum(r1, 2.0 * np.pi - r1)
    r2 = np.mod(kbar * p * p, 4.0 * np.pi)
    r2 = np.minimum(r2, 4.0 * np.pi - r2)
    return np.flatnonzero((r1 < tol) & (r2 < tol)).astype(np.int64) + 1


@dataclass(frozen=True)
class FloquetLocalization:
    """Exponential decay lengths of Floquet eigenvectors (periodic rotor)."""

    lengths: np.ndarray
    median_length: float
    n_accepted: int
    n_states: int


def floquet_localization_lengths(K: float, kbar: float, n: int = 256,
                                 beta: float = 0.0, q_min: float = 2.0
                                 ) -> FloquetLocalization:
    """Diagonalize the one-kick operator of the periodic rotor (eps=0)
    and fit the exponential decay of each eigenvector density.

    Only a cross-check at small n: localization in production runs is
    measured dynamically.  Each eigenvector is recentered on its peak
    before the folded exponential fit; states whose fit is rejected
    (poles of the fit window on the ring boundary, or non-exponential
    shape) are excluded from the summary.
    """
    from .observables import Distribution, fit_exponential_localization
    from .quantum import MomentumGrid, dense_floquet_matrix

    params = RotorParams(K=K, kbar=kbar, epsilon=0.0)
    grid = MomentumGrid(n=int(n), beta=beta)
    u = dense_floquet_matrix(params, grid)
    _, vecs = np.linalg.eig(u)
    density = np.abs(vecs) ** 2  # columns are eigenvectors, FFT index order
    # reorder rows to centered momentum m in [-n/2, n/2)
    density = np.fft.fftshift(density, axes=0)
    m_centered = np.arange(grid.n) - grid.n // 2
    lengths = []
    for col in range(grid.n):
        d = density[:, col]
        peak = int(np.argmax(d))
        rolled = np.roll(d, grid.n // 2 - peak)
        fit = fit_exponential_localization(
            Distribution(p=m_centered, density=rolled), q_min=q_min)
        if fit.accepted:
            lengths.append(fit.ell)
    lengths = np.asarray(lengths, dtype=float)
    median = float(np.median(lengths)) if lengths.size else math.nan
    return FloquetLocalization(lengths=lengths, median_length=median,
                               n_accepted=int(lengths.size),
                               n_states=grid.n)
