import math

import numpy as np
import pytest

from qpkr.classical import (
    ClassicalState,
    classical_diffusion_constant,
    evolve_classical_3d,
    evolve_classical_ensemble,
    quasiperiodic_classical_step,
    standard_map_step,
)
from qpkr.errors import ParameterError
from qpkr.params import RotorParams

TWO_PI = 2.0 * math.pi


def test_standard_map_step_oracle():
    state = ClassicalState(x=np.array([1.0]), p=np.array([2.5]))
    standard_map_step(state, K=3.0)
    x1 = (1.0 + 2.5) % TWO_PI
    assert math.isclose(state.x[0], x1)
    assert math.isclose(state.p[0], 2.5 + 3.0 * math.sin(x1))
    assert state.t == 1


def test_quasiperiodic_step_reduces_to_standard_map():
    params = RotorParams(K=3.0, kbar=2.85, epsilon=0.0)
    a = ClassicalState(x=np.array([0.7, 4.0]), p=np.array([-1.0, 2.0]))
    b = ClassicalState(x=np.array([0.7, 4.0]), p=np.array([-1.0, 2.0]))
    standard_map_step(a, 3.0)
    quasiperiodic_classical_step(b, params, 0)
    assert np.allclose(a.x, b.x) and np.allclose(a.p, b.p)


def test_quasiperiodic_step_modulates_kick():
    params = RotorParams(K=3.0, kbar=2.85, epsilon=0.5, omega2=1.0,
                         omega3=2.0)
    state = ClassicalState(x=np.array([1.0]), p=np.array([0.5]))
    quasiperiodic_classical_step(state, params, t=4)
    x1 = 1.5 % TWO_PI
    amp = 3.0 * (1.0 + 0.5 * math.cos(4.0) * math.cos(8.0))
    assert math.isclose(state.p[0], 0.5 + amp * math.sin(x1))


def test_diffusion_quasilinear():
    # strongly chaotic with phase-averaged modulation: D ~ K^2/(2 kbar^2)
    params = RotorParams(K=10.0, kbar=2.85, epsilon=0.436)
    est = classical_diffusion_constant(params, n_traj=20_000, t_max=400,
                                       seed=3)
    d_ql = params.K**2 / (2.0 * params.kbar**2)
    assert not est.kam_limited
    assert 0.9 < est.exponent < 1.1
    assert abs(est.D - d_ql) / d_ql < 0.25


def test_kam_regime_flagged():
    params = RotorParams(K=0.5, kbar=2.85, epsilon=0.0)
    est = classical_diffusion_constant(params, n_traj=3000, t_max=200,
                                       seed=5)
    assert est.kam_limited
    assert est.exponent < 0.9


def test_diffusion_validation():
    with pytest.raises(ParameterError):
        classical_diffusion_constant(RotorParams(), n_traj=100, t_max=50)


def test_classical_ensemble_linear_growth():
    params = RotorParams(K=9.0, kbar=2.85, epsilon=0.8)
    series = evolve_classical_ensemble(params, n_traj=4000, t_max=300,
                                       seed=12)
    assert series.source == "classical"
    sel = series.times >= 30
    slope = np.polyfit(np.log(series.times[sel].astype(float)),
                       np.log(series.p2_mean[sel]), 1)[0]
    assert abs(slope - 1.0) < 0.08


def test_classical_ensemble_initial_kinds():
    params = RotorParams(K=5.0, kbar=2.85, epsilon=0.0)
    series = evolve_classical_ensemble(params, n_traj=100, t_max=10, seed=1,
                                       initial_kind="plane_zero",
                                       record_times=np.array([1, 10]))
    assert len(series.times) == 2
    with pytest.raises(ParameterError):
        evolve_classical_ensemble(params, n_traj=10, t_max=10, seed=1,
                                  initial_kind="maxwell")
    with pytest.raises(ParameterError):
        evolve_classical_ensemble(params, n_traj=10, t_max=10, seed=1,
                                  phase_sampling="other")
    with pytest.raises(ParameterError):
        evolve_classical_ensemble(params, n_traj=10, t_max=0, seed=1)


def test_classical_ensemble_distribution():
    params = RotorParams(K=8.0, kbar=2.85, epsilon=0.3)
    series = evolve_classical_ensemble(params, n_traj=5000, t_max=100,
                                       seed=7, distribution_times=(100,))
    dist = series.distributions[100]
    assert math.isclose(dist.mass(), 1.0, abs_tol=1e-9)
    assert math.isclose(dist.second_moment(), series.p2_mean[-1],
                        rel_tol=0.05)


def test_classical_ensemble_deterministic():
    params = RotorParams(K=6.0, kbar=2.85, epsilon=0.4)
    a = evolve_classical_ensemble(params, n_traj=500, t_max=50, seed=42)
    b = evolve_classical_ensemble(params, n_traj=500, t_max=50, seed=42)
    c = evolve_classical_ensemble(params, n_traj=500, t_max=50, seed=43)
    assert np.array_equal(a.p2_mean, b.p2_mean)
    assert not np.array_equal(a.p2_mean, c.p2_mean)


def test_3d_map_anisotropy():
    # rotor axis takes the full kick, drive axes only the epsilon part
    params = RotorParams(K=10.0, kbar=2.85, epsilon=0.8)
    res = evolve_classical_3d(params, n_traj=20_000, t_max=300, seed=11)
    assert res.D1 > 2.0 * res.D2
    assert res.D2 > 0 and res.D3 > 0
    # omega2 and omega3 enter symmetrically
    assert abs(res.D2 - res.D3) < 0.5 * res.D2
    assert math.isclose(res.final_p1.mass(), 1.0, abs_tol=1e-9)


def test_3d_requires_modulation_for_transverse_diffusion():
    params = RotorParams(K=10.0, kbar=2.85, epsilon=0.0)
    res = evolve_classical_3d(params, n_traj=2000, t_max=200, seed=2)
    # ungated conjugate kicks vanish at epsilon = 0
    assert res.dp2_sq.max() == 0.0
    assert res.dp3_sq.max() == 0.0
    assert res.D1 > 0
