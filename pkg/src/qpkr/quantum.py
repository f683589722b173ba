"""Spectral split-step propagation of the (quasi)periodic kicked rotor.

One period applies the kick phase exp(-i K(t) cos x / kbar) in position
space and then the free phase exp(-i kbar (m+beta)^2 / 2) in momentum
space; position space is reached by inverse FFT and left by forward FFT,
so the pair is an exact inverse and the norm is conserved to rounding.

The ensemble engine evolves trajectories in batches (chunks) of 64; each
trajectory owns a counter-based random stream keyed by (seed, index), so
results are bit-identical for a given (params, spec) regardless of the
execution schedule, and a chunk that trips the grid-saturation flag can be
replayed on a doubled grid with exactly the same draws.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError
from .observables import Distribution, EnsembleSeries
from .params import TWO_PI, RotorParams, log_schedule

CHUNK = 64            # trajectories per batch; fixed so chunk boundaries are stable
TAIL_FRACTION = 0.9   # |m| > 0.9 n/2 is "tail" for the saturation flag
TAIL_LIMIT = 1e-8
DEFAULT_GRID = 2048


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class MomentumGrid:
    """Momentum lattice m in [-n/2, n/2) with quasi-momentum beta.

    The physical momentum of site m is pfrak = m + beta in units of
    2*hbar*kL (p = kbar*pfrak).
    """

    n: int
    beta: float = 0.0

    def __post_init__(self):
        if not (_is_pow2(self.n) and self.n >= 64):
            raise ParameterError(f"grid size must be a power of two >= 64, got {self.n}")
        if not (0.0 <= self.beta < 1.0):
            raise ParameterError(f"beta must lie in [0, 1), got {self.beta}")

    def m_values(self) -> np.ndarray:
        """Site indices in FFT storage order: 0..n/2-1, -n/2..-1."""
        return _m_table(self.n)

    def pfrak(self) -> np.ndarray:
        return self.m_values() + self.beta


@lru_cache(maxsize=16)
def _m_table(n: int) -> np.ndarray:
    m = np.arange(n, dtype=np.int64)
    m[n // 2:] -= n
    m.setflags(write=False)
    return m


@lru_cache(maxsize=16)
def _cos_half_table(n: int) -> np.ndarray:
    """cos(x_j) on x_j = 2 pi j / n for j = 0..n/2, made exactly symmetric
    by construction (the full grid is this table mirrored)."""
    c = np.cos(TWO_PI * np.arange(n // 2 + 1) / n)
    c.setflags(write=False)
    return c


@lru_cache(maxsize=16)
def _tail_slice(n: int) -> slice:
    lo = int(math.floor(TAIL_FRACTION * n / 2)) + 1
    return slice(lo, n - lo + 1)


def _mirror_cols(half: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Expand values on j = 0..n/2 to the full periodic grid using the
    j <-> n-j symmetry; `half` has n/2+1 columns, `out` has n."""
    h = half.shape[-1] - 1
    out[..., :h + 1] = half
    out[..., h + 1:] = half[..., h - 1:0:-1]
    return out


def _kick_phase(amp_over_kbar, n: int, out: np.ndarray | None = None) -> np.ndarray:
    """exp(-i a cos x) on the position grid; `a` scalar or per-trajectory."""
    c = _cos_half_table(n)
    a = np.asarray(amp_over_kbar, dtype=float)
    theta = np.multiply.outer(a, c) if a.ndim else a * c
    half = np.exp(-1j * theta)
    if out is None:
        out = np.empty(theta.shape[:-1] + (n,), dtype=complex)
    return _mirror_cols(half, out)


def _free_phase(kbar: float, n: int, beta) -> np.ndarray:
    """exp(-i kbar (m+beta)^2 / 2); beta scalar -> (n,), vector -> (B, n)."""
    m = _m_table(n)
    b = np.asarray(beta, dtype=float)
    pf = m + (b[..., None] if b.ndim else b)
    return np.exp(-0.5j * kbar * pf * pf)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory `index`; independent by key."""
    return np.random.Generator(np.random.Philox(key=[seed, index]))


@dataclass
class WaveState:
    """Wavefunction over momentum sites (FFT storage order) at kick count t."""

    psi: np.ndarray
    grid: MomentumGrid
    t: int = 0
    saturated: bool = False

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != (self.grid.n,):
            raise ParameterError("psi length must equal grid.n")

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2)))

    def p2(self) -> float:
        """<pfrak^2> of the current state."""
        return float(np.sum(np.abs(self.psi) ** 2 * self.grid.pfrak() ** 2))

    def tail_mass(self) -> float:
        sl = _tail_slice(self.grid.n)
        return float(np.sum(np.abs(self.psi[sl]) ** 2))

    def as_distribution(self) -> Distribution:
        """|psi|^2 binned to the integer momentum lattice (pfrak rounded)."""
        n = self.grid.n
        shift = int(np.rint(self.grid.beta))
        dens = np.fft.fftshift(np.abs(self.psi) ** 2)
        centers = np.arange(-n // 2, n // 2) + shift
        return Distribution(p=centers.astype(float), density=dens)


@dataclass(frozen=True)
class EnsembleSpec:
    """How to draw an ensemble of initial conditions.

    Per-trajectory draws use the stream trajectory_rng(seed, i) in a fixed
    order: beta, then (phi2, phi3) if phase_sampling is uniform, then the
    thermal site phases, then a block of t_max spontaneous-emission
    uniforms if eta_se > 0, then per-event beta redraws in kick order.
    """

    n_traj: int
    seed: int = 1
    initial_kind: str = "plane_zero"
    thermal_fwhm: float = 4.0
    beta_sampling: str = "uniform"
    beta0: float = 0.0
    phase_sampling: str = "uniform"

    def __post_init__(self):
        if self.n_traj < 1:
            raise ParameterError("n_traj must be >= 1")
        if self.initial_kind not in ("plane_zero", "thermal"):
            raise ParameterError(f"unknown initial_kind {self.initial_kind!r}")
        if self.beta_sampling not in ("uniform", "fixed"):
            raise ParameterError(f"unknown beta_sampling {self.beta_sampling!r}")
        if self.phase_sampling not in ("uniform", "fixed"):
            raise ParameterError(f"unknown phase_sampling {self.phase_sampling!r}")
        if not (0.0 <= self.beta0 < 1.0):
            raise ParameterError("beta0 must lie in [0, 1)")
        if self.thermal_fwhm <= 0:
            raise ParameterError("thermal_fwhm must be positive")


def thermal_support_halfwidth(fwhm: float) -> int:
    """Half-width of the integer-m support used for thermal states.

    Fixed by the FWHM alone (never by the grid size) so that a trajectory
    is the same physical state on any grid: the amplitude at the cut is
    below 1e-30, and the random site phases consume a grid-independent
    number of draws.
    """
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    h = 32
    while h < 16.0 * sigma:
        h *= 2
    return h


def _thermal_amplitudes(fwhm: float) -> np.ndarray:
    """Real amplitude profile over m = -h..h-1 (|psi_m|^2 Gaussian, FWHM fwhm)."""
    h = thermal_support_halfwidth(fwhm)
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    m = np.arange(-h, h, dtype=float)
    a = np.exp(-m * m / (4.0 * sigma * sigma))
    return a / math.sqrt(np.sum(a * a))


def build_initial_state(spec: EnsembleSpec, grid: MomentumGrid,
                        rng: np.random.Generator) -> WaveState:
    """Draw one initial state; consumes the thermal phase block if needed."""
    psi = np.zeros(grid.n, dtype=complex)
    if spec.initial_kind == "plane_zero":
        psi[0] = 1.0
    else:
        h = thermal_support_halfwidth(spec.thermal_fwhm)
        if h > grid.n // 2:
            raise ParameterError("grid too small for the thermal support")
        a = _thermal_amplitudes(spec.thermal_fwhm)
        theta = rng.uniform(0.0, TWO_PI, 2 * h)
        amp = a * np.exp(1j * theta)
        m = np.arange(-h, h)
        psi[np.mod(m, grid.n)] = amp
    return WaveState(psi=psi, grid=grid)


# --------------------------------------------------------------------------
# Single-state operations (reference forms; the batch engine inlines the
# same tables, so both paths share every phase formula)
# --------------------------------------------------------------------------

def step(state: WaveState, params: RotorParams, t: int) -> WaveState:
    """One period: kick phase in position space, then free phase.

    t must equal state.t (the kick index entering kick_strength).  Sets the
    saturated flag if the tail-mass invariant is violated afterwards.
    """
    if t != state.t:
        raise ParameterError(f"t={t} does not match state.t={state.t}")
    nrm = state.norm()
    if abs(nrm - 1.0) > 1e-6:
        raise ParameterError(f"state norm {nrm} is not 1")
    n = state.grid.n
    c2 = math.cos(params.omega2 * t + params.phi2)
    c3 = math.cos(params.omega3 * t + params.phi3)
    amp = params.K * (1.0 + params.epsilon * c2 * c3)
    u = np.fft.ifft(state.psi)
    u *= _kick_phase(amp / params.kbar, n)
    psi = np.fft.fft(u)
    psi *= _free_phase(params.kbar, n, state.grid.beta)
    state.psi = psi
    state.t = t + 1
    if state.tail_mass() > TAIL_LIMIT:
        state.saturated = True
    return state


def dense_floquet_matrix(params: RotorParams, grid: MomentumGrid,
                         step_index: int = 0) -> np.ndarray:
    """One-kick unitary (kick at `step_index`, then free rotation) as an
    explicit n x n matrix in the momentum basis.  Quadratic storage, so n
    is capped at 512; shares the phase tables with the fast engine."""
    if grid.n > 512:
        raise ParameterError("dense Floquet matrix limited to n <= 512")
    n = grid.n
    j = np.arange(n)
    k = np.arange(n)
    # u_j = (1/n) sum_k psi_k e^{2 pi i j k / n}  (matches np.fft.ifft)
    to_pos = np.exp(2j * np.pi * np.outer(j, k) / n) / n
    to_mom = np.exp(-2j * np.pi * np.outer(k, j) / n)
    cosx = np.empty(n)
    _mirror_cols(_cos_half_table(n), cosx)
    free = _free_phase(params.kbar, n, grid.beta)
    c2 = math.cos(params.omega2 * step_index + params.phi2)
    c3 = math.cos(params.omega3 * step_index + params.phi3)
    amp = params.K * (1.0 + params.epsilon * c2 * c3)
    kick = np.exp(-1j * (amp / params.kbar) * cosx)
    return (free[:, None] * to_mom) @ (kick[:, None] * to_pos)


def dense_oracle_evolve(params: RotorParams, grid: MomentumGrid,
                        psi0: np.ndarray, t: int) -> WaveState:
    """Verification oracle: explicit one-kick unitaries applied by
    matrix-vector products.  Cost n^2 per kick, so n is capped at 256."""
    if grid.n > 256:
        raise ParameterError("dense oracle limited to n <= 256")
    n = grid.n
    psi = np.asarray(psi0, dtype=complex).copy()
    if psi.shape != (n,):
        raise ParameterError("psi0 length must equal grid.n")
    for step_index in range(int(t)):
        psi = dense_floquet_matrix(params, grid, step_index) @ psi
    state = WaveState(psi=psi, grid=grid, t=int(t))
    if state.tail_mass() > TAIL_LIMIT:
        state.saturated = True
    return state


def apply_spontaneous_emission(state: WaveState, eta_se: float,
                               rng: np.random.Generator) -> WaveState:
    """With probability eta_se per kick, resample beta uniformly in [0,1)
    (a random photon recoil is never an integer number of lattice units);
    |psi_m|^2 is untouched."""
    if eta_se < 0:
        raise ParameterError("eta_se must be >= 0")
    if eta_se > 0 and rng.random() < eta_se:
        state.grid = MomentumGrid(n=state.grid.n, beta=float(rng.random()))
    return state


def apply_gravity_drift(state: WaveState, eta_g: float, kbar: float) -> WaveState:
    """Quasi-momentum drift beta <- (beta - eta_g/kbar) mod 1, one kick.

    When beta wraps past 0 the same physical momenta are re-labelled
    (m+1) + (beta_wrapped) , so the amplitudes are rolled one site to keep
    pfrak = m + beta continuous; nothing else changes.
    """
    if eta_g < 0:
        raise ParameterError("eta_g must be >= 0")
    raw = state.grid.beta - eta_g / kbar
    wraps = int(math.floor(raw))
    beta = raw - wraps
    if wraps:
        state.psi = np.roll(state.psi, wraps)
    state.grid = MomentumGrid(n=state.grid.n, beta=float(beta))
    return state


def suggest_grid_size(params: RotorParams, t_max: int, *, sigma0: float = 2.0,
                      n_min: int = 256, n_max: int = 65536) -> int:
    """Grid size keeping a quasilinear-diffusion estimate of the spread
    inside the tail threshold: n >= 13.8 sigma with sigma^2 = D t + sigma0^2."""
    d_ql = params.K**2 * (1.0 + params.epsilon**2 / 4.0) / (2.0 * params.kbar**2)
    sigma = math.sqrt(d_ql * t_max + sigma0 * sigma0)
    n = n_min
    while n < 13.8 * sigma and n < n_max:
        n *= 2
    return n


# --------------------------------------------------------------------------
# Batched ensemble engine
# --------------------------------------------------------------------------

@dataclass
class _ChunkResult:
    indices: np.ndarray           # global trajectory indices
    n: int                        # grid size actually used
    p2: np.ndarray                # (B, T) <pfrak^2> at record times
    sat_first: np.ndarray         # (B,) first kick with tail breach, -1 if none
    dist: dict                    # t -> (offset_bin, canvas) density sums


def _run_chunk(params: RotorParams, spec: EnsembleSpec, indices: np.ndarray,
               n: int, t_max: int, record_times: np.ndarray,
               dist_times: tuple) -> _ChunkResult:
    B = len(indices)
    m = _m_table(n).astype(float)
    eta = params.eta_se
    drift = params.eta_g / params.kbar if params.eta_g > 0 else 0.0

    beta = np.empty(B)
    phi2 = np.empty(B)
    phi3 = np.empty(B)
    psi = np.zeros((B, n), dtype=complex)
    gens = []
    thermal = spec.initial_kind == "thermal"
    if thermal:
        h = thermal_support_halfwidth(spec.thermal_fwhm)
        if h > n // 2:
            raise ParameterError("grid too small for the thermal support")
        a = _thermal_amplitudes(spec.thermal_fwhm)
        cols = np.mod(np.arange(-h, h), n)
    u_block = np.empty((B, t_max)) if eta > 0 else None
    for row, idx in enumerate(indices):
        rng = trajectory_rng(spec.seed, int(idx))
        beta[row] = spec.beta0 if spec.beta_sampling == "fixed" else rng.random()
        if spec.phase_sampling == "uniform":
            phi2[row], phi3[row] = rng.uniform(0.0, TWO_PI, 2)
        else:
            phi2[row], phi3[row] = params.phi2, params.phi3
        if thermal:
            theta = rng.uniform(0.0, TWO_PI, 2 * h)
            psi[row, cols] = a * np.exp(1j * theta)
        else:
            psi[row, 0] = 1.0
        if eta > 0:
            u_block[row] = rng.random(t_max)
        gens.append(rng)

    rec_index = {int(t): i for i, t in enumerate(record_times)}
    dist_wanted = set(int(t) for t in dist_times)
    T = len(record_times)
    p2 = np.empty((B, T))
    sat_first = np.full(B, -1, dtype=np.int64)
    dist: dict[int, tuple[int, np.ndarray]] = {}
    tail = _tail_slice(n)

    kbar, K, eps = params.kbar, params.K, params.epsilon
    w2, w3 = params.omega2, params.omega3
    uniform_phases = spec.phase_sampling == "uniform"
    static_kick = eps == 0.0
    kick_buf = np.empty((B, n), dtype=complex) if (uniform_phases and not static_kick) \
        else np.empty(n, dtype=complex)
    if static_kick:
        _kick_phase(K / kbar, n, out=kick_buf)
    free = _free_phase(kbar, n, beta)
    pm2 = (m[None, :] + beta[:, None]) ** 2
    beta_dirty = False

    def record(time_value: int) -> None:
        nonlocal pm2, beta_dirty
        if beta_dirty:
            pm2 = (m[None, :] + beta[:, None]) ** 2
            beta_dirty = False
        abs2 = psi.real**2 + psi.imag**2
        p2[:, rec_index[time_value]] = np.einsum("bn,bn->b", abs2, pm2)
        if time_value in dist_wanted:
            shifts = np.rint(beta).astype(np.int64)
            lo = int(shifts.min()) - n // 2
            hi = int(shifts.max()) + n // 2  # inclusive top bin center
            canvas = np.zeros(hi - lo + 1)
            for row in range(B):
                start = shifts[row] - n // 2 - lo
                canvas[start:start + n] += np.fft.fftshift(abs2[row])
            dist[time_value] = (lo, canvas)

    if 0 in rec_index:
        record(0)
    for t in range(t_max):
        if static_kick:
            kick = kick_buf
        elif uniform_phases:
            amp = K * (1.0 + eps * np.cos(w2 * t + phi2) * np.cos(w3 * t + phi3))
            kick = _kick_phase(amp / kbar, n, out=kick_buf)
        else:
            amp = K * (1.0 + eps * math.cos(w2 * t + params.phi2)
                       * math.cos(w3 * t + params.phi3))
            kick = _kick_phase(amp / kbar, n, out=kick_buf)
        u = np.fft.ifft(psi, axis=-1)
        u *= kick
        psi = np.fft.fft(u, axis=-1)
        psi *= free

        hits = np.empty(0, dtype=np.int64)
        if drift:
            beta -= drift
        if eta > 0:
            hits = np.flatnonzero(u_block[:, t] < eta)
            for row in hits:
                beta[row] = gens[row].random()
        if drift:
            free = _free_phase(kbar, n, beta)
            beta_dirty = True
        elif hits.size:
            free[hits] = _free_phase(kbar, n, beta[hits])
            beta_dirty = True

        tn = t + 1
        tm = np.sum(psi[:, tail].real**2 + psi[:, tail].imag**2, axis=-1)
        newly = (tm > TAIL_LIMIT) & (sat_first < 0)
        if np.any(newly):
            sat_first[newly] = tn
        if tn in rec_index:
            record(tn)
    return _ChunkResult(indices=np.asarray(indices), n=n, p2=p2,
                        sat_first=sat_first, dist=dist)


def evolve_ensemble(params: RotorParams, spec: EnsembleSpec, t_max: int,
                    record_times=None, *, points_per_decade: int = 10,
                    grid_n: int | None = None, workers: int = 1,
                    distribution_times: tuple = (), max_doublings: int = 2,
                    ) -> EnsembleSeries:
    """Propagate an ensemble and reduce it to an EnsembleSeries.

    Trajectories run in fixed chunks of 64; partial results merge in chunk
    order, so means are independent of the execution schedule (workers is
    purely a throughput knob).  A chunk whose tail mass breaches 1e-8 is
    replayed in full on a doubled grid (same streams) up to max_doublings
    times; trajectories still saturated afterwards are flagged and the
    affected record times are marked in the series.
    """
    if t_max < 0:
        raise ParameterError("t_max must be >= 0")
    if record_times is None:
        record_times = log_schedule(1, t_max, points_per_decade) if t_max else [0]
    record_times = np.unique(np.asarray(record_times, dtype=np.int64))
    if record_times.size and (record_times[0] < 0 or record_times[-1] > t_max):
        raise ParameterError("record times must lie in [0, t_max]")
    for td in distribution_times:
        if int(td) not in set(int(x) for x in record_times):
            raise ParameterError("distribution_times must be record times")
    n0 = grid_n if grid_n is not None else DEFAULT_GRID
    MomentumGrid(n=n0)  # validate size

    chunks = [np.arange(c, min(c + CHUNK, spec.n_traj))
              for c in range(0, spec.n_traj, CHUNK)]
    args = [(params, spec, idx, n0, t_max, record_times, tuple(distribution_times))
            for idx in chunks]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk_args, args))
    else:
        results = [_run_chunk(*a) for a in args]

    # replay saturated chunks on doubled grids, same streams
    final: list[_ChunkResult] = []
    retries = 0
    for res in results:
        level = 0
        while np.any(res.sat_first >= 0) and level < max_doublings:
            level += 1
            retries += 1
            res = _run_chunk(params, spec, res.indices, n0 * 2**level,
                             t_max, record_times, tuple(distribution_times))
        final.append(res)

    T = len(record_times)
    p2_all = np.empty((spec.n_traj, T))
    sat_first = np.full(spec.n_traj, -1, dtype=np.int64)
    for res in final:
        p2_all[res.indices] = res.p2
        sat_first[res.indices] = res.sat_first
    p2_mean = p2_all.mean(axis=0)
    if spec.n_traj > 1:
        p2_sem = p2_all.std(axis=0, ddof=1) / math.sqrt(spec.n_traj)
    else:
        p2_sem = np.zeros(T)
    sat_times = np.zeros(T, dtype=bool)
    bad = sat_first[sat_first >= 0]
    if bad.size:
        sat_times = record_times[None, :] >= bad[:, None]
        sat_times = np.any(sat_times, axis=0)

    distributions: dict[int, Distribution] = {}
    for td in distribution_times:
        td = int(td)
        lo = min(res.dist[td][0] for res in final)
        hi = max(res.dist[td][0] + len(res.dist[td][1]) for res in final)
        canvas = np.zeros(hi - lo)
        for res in final:
            off, part = res.dist[td]
            canvas[off - lo:off - lo + len(part)] += part
        canvas /= spec.n_traj
        nz = np.flatnonzero(canvas)
        sl = slice(nz[0], nz[-1] + 1) if nz.size else slice(0, len(canvas))
        centers = np.arange(lo, hi, dtype=float)[sl]
        distributions[td] = Distribution(p=centers, density=canvas[sl])

    return EnsembleSeries(
        params=params, times=record_times, p2_mean=p2_mean, p2_sem=p2_sem,
        n_traj=spec.n_traj, saturated=sat_times, distributions=distributions,
        source="quantum",
        meta={
            "grid_n": n0,
            "chunk_grids": [int(res.n) for res in final],
            "retried_chunks": retries,
            "saturated_traj": np.flatnonzero(sat_first >= 0).tolist(),
            "seed": spec.seed,
        },
    )


def _run_chunk_args(a):
    return _run_chunk(*a)
