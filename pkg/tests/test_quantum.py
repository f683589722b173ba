import math

import numpy as np
import pytest

from qpkr.errors import ParameterError
from qpkr.params import RotorParams, log_schedule
from qpkr.quantum import (
    EnsembleSpec,
    MomentumGrid,
    WaveState,
    apply_gravity_drift,
    apply_spontaneous_emission,
    build_initial_state,
    dense_floquet_matrix,
    dense_oracle_evolve,
    evolve_ensemble,
    step,
    suggest_grid_size,
    thermal_support_halfwidth,
    trajectory_rng,
)

TWO_PI = 2.0 * math.pi


def random_state(grid, seed=0):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=grid.n) + 1j * rng.normal(size=grid.n)
    psi /= np.linalg.norm(psi)
    return WaveState(psi=psi, grid=grid)


@pytest.mark.parametrize("n", [63, 32, 0, 96])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ParameterError):
        MomentumGrid(n=n)


def test_grid_rejects_bad_beta():
    with pytest.raises(ParameterError):
        MomentumGrid(n=64, beta=1.0)
    with pytest.raises(ParameterError):
        MomentumGrid(n=64, beta=-0.1)


def test_grid_layout():
    g = MomentumGrid(n=64, beta=0.25)
    m = g.m_values()
    assert m[0] == 0 and m[31] == 31 and m[32] == -32 and m[-1] == -1
    assert np.array_equal(g.pfrak(), m + 0.25)


def test_split_step_matches_dense_oracle():
    params = RotorParams(K=6.4, kbar=2.85, epsilon=0.436)
    grid = MomentumGrid(n=64, beta=0.37)
    state = random_state(grid, seed=5)
    psi0 = state.psi.copy()
    for t in range(10):
        step(state, params, t)
    oracle = dense_oracle_evolve(params, grid, psi0, 10)
    assert np.max(np.abs(state.psi - oracle.psi)) < 1e-10


def test_dense_floquet_unitary():
    params = RotorParams(K=5.0, kbar=2.89, epsilon=0.3)
    u = dense_floquet_matrix(params, MomentumGrid(n=64, beta=0.1), 3)
    assert np.max(np.abs(u @ u.conj().T - np.eye(64))) < 1e-12


def test_step_guards():
    params = RotorParams()
    state = random_state(MomentumGrid(n=64))
    with pytest.raises(ParameterError):
        step(state, params, 1)  # state.t is 0
    bad = WaveState(psi=2.0 * state.psi, grid=state.grid)
    with pytest.raises(ParameterError):
        step(bad, params, 0)


def test_norm_preserved():
    params = RotorParams(K=6.4, kbar=2.85, epsilon=0.436)
    state = random_state(MomentumGrid(n=256), seed=1)
    for t in range(100):
        step(state, params, t)
    assert abs(state.norm() - 1.0) < 1e-12


def test_antiresonance_period_two():
    # kbar = 2 pi, beta = 0: the free phase exp(-i pi m^2) = (-1)^m is a
    # half-period translation, so two kicks cancel exactly and the state
    # returns to itself up to a global phase
    params = RotorParams(K=5.0, kbar=TWO_PI, epsilon=0.0)
    grid = MomentumGrid(n=128, beta=0.0)
    state = random_state(grid, seed=2)
    psi0 = state.psi.copy()
    step(state, params, 0)
    step(state, params, 1)
    overlap = abs(np.vdot(psi0, state.psi))
    assert overlap > 1.0 - 1e-12


@pytest.mark.parametrize("kbar,beta", [(2.0 * TWO_PI, 0.0), (TWO_PI, 0.5)])
def test_quantum_resonance_ballistic(kbar, beta):
    # flat free phase: t kicks compose to exp(-i t K cos x / kbar), whose
    # momentum distribution is Bessel with <m^2> = (t K / kbar)^2 / 2
    K = 5.0
    params = RotorParams(K=K, kbar=kbar, epsilon=0.0)
    grid = MomentumGrid(n=1024, beta=beta)
    psi = np.zeros(1024, dtype=complex)
    psi[0] = 1.0
    state = WaveState(psi=psi, grid=grid)
    for t in range(30):
        step(state, params, t)
    expect = (30.0 * K / kbar) ** 2 / 2.0
    if beta:
        expect += beta**2  # initial site sits at pfrak = beta
    assert math.isclose(state.p2(), expect, rel_tol=1e-9)


def test_thermal_state_profile():
    spec = EnsembleSpec(n_traj=1, initial_kind="thermal", thermal_fwhm=4.0)
    grid = MomentumGrid(n=256)
    state = build_initial_state(spec, grid, trajectory_rng(0, 0))
    assert abs(state.norm() - 1.0) < 1e-12
    dens = np.abs(state.psi) ** 2
    # |psi|^2 has FWHM 4: density at m = +-2 is half the peak
    assert math.isclose(dens[2] / dens[0], 0.5, rel_tol=1e-12)
    assert math.isclose(dens[-2] / dens[0], 0.5, rel_tol=1e-12)


def test_thermal_support_is_grid_independent():
    h = thermal_support_halfwidth(4.0)
    assert h >= 16.0 * 4.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    spec = EnsembleSpec(n_traj=1, initial_kind="thermal")
    a = build_initial_state(spec, MomentumGrid(n=256), trajectory_rng(9, 3))
    b = build_initial_state(spec, MomentumGrid(n=512), trajectory_rng(9, 3))
    # same physical state on both grids: compare site m = 1 and m = -1
    assert a.psi[1] == b.psi[1]
    assert a.psi[-1] == b.psi[-1]


def test_trajectory_rng_streams():
    a = trajectory_rng(7, 0).random(4)
    b = trajectory_rng(7, 1).random(4)
    c = trajectory_rng(7, 0).random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)


@pytest.mark.parametrize("kwargs", [
    {"n_traj": 0},
    {"n_traj": 1, "initial_kind": "gauss"},
    {"n_traj": 1, "beta_sampling": "random"},
    {"n_traj": 1, "beta0": 1.0},
    {"n_traj": 1, "thermal_fwhm": 0.0},
    {"n_traj": 1, "phase_sampling": "drawn"},
])
def test_ensemble_spec_validation(kwargs):
    with pytest.raises(ParameterError):
        EnsembleSpec(**kwargs)


def test_evolve_ensemble_matches_single_trajectories():
    params = RotorParams(K=6.4, kbar=2.85, epsilon=0.436)
    spec = EnsembleSpec(n_traj=3, seed=11)
    times = np.array([1, 5, 10, 20])
    series = evolve_ensemble(params, spec, 20, times, grid_n=256)

    p2 = np.zeros((3, len(times)))
    for i in range(3):
        rng = trajectory_rng(spec.seed, i)
        beta = rng.random()
        phi2, phi3 = rng.uniform(0.0, TWO_PI, 2)
        grid = MomentumGrid(n=256, beta=beta)
        psi = np.zeros(256, dtype=complex)
        psi[0] = 1.0
        state = WaveState(psi=psi, grid=grid)
        traj_params = RotorParams(K=params.K, kbar=params.kbar,
                                  epsilon=params.epsilon,
                                  omega2=params.omega2, omega3=params.omega3,
                                  phi2=phi2, phi3=phi3)
        for t in range(20):
            step(state, traj_params, t)
            if t + 1 in times:
                p2[i, list(times).index(t + 1)] = state.p2()
    assert np.allclose(series.p2_mean, p2.mean(axis=0), rtol=1e-12)
    assert series.n_traj == 3
    assert not series.saturated.any()


def test_evolve_ensemble_worker_invariance():
    params = RotorParams(K=5.0, kbar=2.85, epsilon=0.2)
    spec = EnsembleSpec(n_traj=130, seed=3)  # spans three chunks
    times = np.array([5, 25])
    one = evolve_ensemble(params, spec, 25, times, grid_n=64, workers=1)
    two = evolve_ensemble(params, spec, 25, times, grid_n=64, workers=2)
    assert np.array_equal(one.p2_mean, two.p2_mean)
    assert np.array_equal(one.p2_sem, two.p2_sem)


def test_saturation_flag_and_grid_doubling():
    # K/kbar large: ballistic-scale spread overruns an n=64 grid fast
    params = RotorParams(K=12.0, kbar=1.0, epsilon=0.0)
    spec = EnsembleSpec(n_traj=4, seed=1)
    times = np.array([1, 5, 20])
    stuck = evolve_ensemble(params, spec, 20, times, grid_n=64,
                            max_doublings=0)
    assert stuck.saturated.any()
    assert stuck.meta["saturated_traj"]
    healed = evolve_ensemble(params, spec, 20, times, grid_n=64,
                             max_doublings=3)
    assert not healed.saturated.any()
    assert healed.meta["retried_chunks"] >= 1
    assert max(healed.meta["chunk_grids"]) > 64


def test_evolve_ensemble_schedule_validation():
    params = RotorParams()
    spec = EnsembleSpec(n_traj=1)
    with pytest.raises(ParameterError):
        evolve_ensemble(params, spec, 10, [5, 20], grid_n=64)
    with pytest.raises(ParameterError):
        evolve_ensemble(params, spec, 10, [5, 10], grid_n=64,
                        distribution_times=(7,))
    with pytest.raises(ParameterError):
        evolve_ensemble(params, spec, -1, grid_n=64)


def test_distributions_normalized():
    params = RotorParams(K=5.0, kbar=2.89, epsilon=0.24)
    spec = EnsembleSpec(n_traj=8, seed=4)
    series = evolve_ensemble(params, spec, 30, np.array([10, 30]),
                             grid_n=128, distribution_times=(30,))
    dist = series.distributions[30]
    assert math.isclose(dist.mass(), 1.0, abs_tol=1e-9)
    # ensemble-averaged second moment agrees with the recorded mean
    # up to the integer binning of pfrak
    assert math.isclose(dist.second_moment(), series.p2_mean[-1],
                        rel_tol=0.1)


def test_suggest_grid_size():
    params = RotorParams(K=6.4, kbar=2.85, epsilon=0.436)
    n_short = suggest_grid_size(params, 100)
    n_long = suggest_grid_size(params, 100_000)
    assert n_short <= n_long <= 65536
    for n in (n_short, n_long):
        assert n >= 256 and (n & (n - 1)) == 0
    # the estimate keeps the diffusive spread inside the tail threshold
    d_ql = params.K**2 * (1 + params.epsilon**2 / 4) / (2 * params.kbar**2)
    assert n_long >= 13.8 * math.sqrt(d_ql * 100_000)


def test_gravity_drift_wraps_and_relabels():
    grid = MomentumGrid(n=64, beta=0.1)
    psi = np.zeros(64, dtype=complex)
    psi[0] = 1.0
    state = WaveState(psi=psi, grid=grid)
    apply_gravity_drift(state, eta_g=0.25 * 2.85, kbar=2.85)
    # beta crossed 0: relabelled to (m+1) + beta_wrapped, same pfrak
    assert math.isclose(state.grid.beta, 0.85)
    # occupied site moved from m=0 to m=-1 so pfrak = -1 + 0.85 = -0.15
    assert np.argmax(np.abs(state.psi)) == 63
    assert math.isclose(state.p2(), (-1 + 0.85) ** 2, abs_tol=1e-12)


def test_gravity_drift_no_wrap():
    grid = MomentumGrid(n=64, beta=0.9)
    psi = np.zeros(64, dtype=complex)
    psi[3] = 1.0
    state = WaveState(psi=psi, grid=grid)
    apply_gravity_drift(state, eta_g=0.2 * 2.85, kbar=2.85)
    assert math.isclose(state.grid.beta, 0.7)
    assert np.argmax(np.abs(state.psi)) == 3  # no roll
    with pytest.raises(ParameterError):
        apply_gravity_drift(state, eta_g=-1.0, kbar=2.85)


def test_spontaneous_emission():
    grid = MomentumGrid(n=64, beta=0.25)
    psi = np.zeros(64, dtype=complex)
    psi[2] = 1.0
    state = WaveState(psi=psi, grid=grid)
    dens = np.abs(state.psi) ** 2

    apply_spontaneous_emission(state, 0.0, trajectory_rng(0, 0))
    assert state.grid.beta == 0.25  # eta = 0 never fires

    apply_spontaneous_emission(state, 1.0, trajectory_rng(0, 0))
    assert state.grid.beta != 0.25  # eta = 1 always fires
    assert np.array_equal(np.abs(state.psi) ** 2, dens)
    with pytest.raises(ParameterError):
        apply_spontaneous_emission(state, -0.5, trajectory_rng(0, 0))


def test_record_time_zero():
    params = RotorParams()
    spec = EnsembleSpec(n_traj=2, seed=8)
    series = evolve_ensemble(params, spec, 5, np.array([0, 5]), grid_n=64)
    # plane-wave start: <pfrak^2> = <beta^2> over the drawn betas
    betas = np.array([trajectory_rng(8, i).random() for i in range(2)])
    assert math.isclose(series.p2_mean[0], np.mean(betas**2), rel_tol=1e-12)
