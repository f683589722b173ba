import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpkr.errors import ParameterError
from qpkr.params import (
    CONFIG_DEFAULTS,
    EXPERIMENTAL_PATH,
    DipoleApproximationWarning,
    PhysicalParams,
    RotorParams,
    SweepPath,
    format_rotor_params,
    kick_strength,
    load_config,
    log_schedule,
    physical_to_scaled,
    rotor_from_config,
    sweep_from_config,
)

TWO_PI = 2.0 * math.pi


def test_rotor_defaults():
    p = RotorParams()
    assert p.K == 6.4
    assert p.kbar == 2.85
    assert p.epsilon == 0.436
    assert math.isclose(p.omega2, TWO_PI * math.sqrt(5.0))
    assert math.isclose(p.omega3, TWO_PI * math.sqrt(13.0))
    assert p.eta_se == 0.0 and p.eta_g == 0.0


@pytest.mark.parametrize("kwargs", [
    {"K": 0.0},
    {"K": -2.0},
    {"K": math.nan},
    {"kbar": 0.0},
    {"kbar": -1.0},
    {"epsilon": -0.1},
    {"epsilon": 1.2},
    {"omega2": math.inf},
    {"phi3": math.nan},
    {"eta_se": 1.5},
    {"eta_se": -0.1},
    {"eta_g": -1e-3},
])
def test_rotor_validation(kwargs):
    with pytest.raises(ParameterError):
        RotorParams(**kwargs)


def test_with_phases_wraps():
    p = RotorParams().with_phases(7.0, -1.0)
    assert math.isclose(p.phi2, 7.0 - TWO_PI)
    assert math.isclose(p.phi3, TWO_PI - 1.0)
    assert 0.0 <= p.phi2 < TWO_PI and 0.0 <= p.phi3 < TWO_PI


def test_physical_to_scaled_oracle():
    # hand-evaluated from the stated formulas at the default lab values
    p = physical_to_scaled(PhysicalParams())
    assert math.isclose(p.K, 15.001597432523205, rel_tol=1e-12)
    assert math.isclose(p.kbar, 2.885127186134951, rel_tol=1e-12)
    assert math.isclose(p.eta_se, 0.003728064367309089, rel_tol=1e-12)
    assert p.eta_g == 0.0
    assert p.epsilon == 0.0  # drive choice defaults off


def test_physical_to_scaled_threads_drive():
    p = physical_to_scaled(PhysicalParams(), epsilon=0.3, omega2=1.0,
                           omega3=2.0, phi2=0.5, phi3=0.7)
    assert p.epsilon == 0.3
    assert (p.omega2, p.omega3, p.phi2, p.phi3) == (1.0, 2.0, 0.5, 0.7)


def test_gravity_tilt_drift():
    flat = physical_to_scaled(PhysicalParams(alpha_tilt=0.0))
    tilted = physical_to_scaled(PhysicalParams(alpha_tilt=math.radians(1.0)))
    assert flat.eta_g == 0.0
    assert math.isclose(tilted.eta_g, 0.0019476513794348988, rel_tol=1e-9)
    # sign convention: only the magnitude of the tilt matters
    down = physical_to_scaled(PhysicalParams(alpha_tilt=-math.radians(1.0)))
    assert math.isclose(down.eta_g, tilted.eta_g, rel_tol=1e-12)


def test_dipole_warning_near_resonance():
    # |DeltaL|/Gamma ~ 57; Omega reduced so eta_se stays a probability
    near = PhysicalParams(DeltaL=TWO_PI * 300e6, Omega=2e8)
    with pytest.warns(DipoleApproximationWarning):
        physical_to_scaled(near)


def test_physical_validation():
    with pytest.raises(ParameterError):
        PhysicalParams(tau=1.0 / 36e3)  # pulse as long as the period
    with pytest.raises(ParameterError):
        PhysicalParams(Omega=0.0)


def test_kick_strength_static():
    p = RotorParams(epsilon=0.0)
    t = np.arange(50)
    assert np.all(kick_strength(p, t) == p.K)
    assert kick_strength(p, 3) == p.K


@given(st.floats(0.1, 20.0), st.floats(0.0, 1.0),
       st.floats(0.0, 50.0), st.floats(0.0, 50.0),
       st.integers(0, 10_000))
def test_kick_strength_bounds(K, eps, w2, w3, t):
    p = RotorParams(K=K, epsilon=eps, omega2=w2, omega3=w3)
    val = kick_strength(p, t)
    assert K * (1.0 - eps) - 1e-12 <= val <= K * (1.0 + eps) + 1e-12


def test_kick_strength_modulation_oracle():
    p = RotorParams(K=2.0, epsilon=0.5, omega2=1.0, omega3=2.0,
                    phi2=0.3, phi3=0.4)
    t = 7
    expect = 2.0 * (1.0 + 0.5 * math.cos(1.0 * t + 0.3)
                    * math.cos(2.0 * t + 0.4))
    assert math.isclose(kick_strength(p, t), expect, rel_tol=1e-15)


def test_log_schedule_small_case():
    assert log_schedule(1, 10, 3).tolist() == [1, 2, 5, 10]
    assert log_schedule(7, 7).tolist() == [7]


@given(st.integers(1, 500), st.integers(1, 500), st.integers(1, 20))
def test_log_schedule_properties(a, b, ppd):
    t_min, t_max = min(a, b), max(a, b)
    times = log_schedule(t_min, t_max, ppd)
    assert times[0] == t_min and times[-1] == t_max
    assert np.all(np.diff(times) > 0)
    assert times.dtype == np.int64


def test_log_schedule_validation():
    with pytest.raises(ParameterError):
        log_schedule(0, 10)
    with pytest.raises(ParameterError):
        log_schedule(10, 5)
    with pytest.raises(ParameterError):
        log_schedule(1, 10, 0)


def test_experimental_path():
    pts = EXPERIMENTAL_PATH.points()
    assert len(pts) == 20
    assert pts[0] == (4.0, 0.1)
    assert pts[-1] == (9.0, 0.8)
    # the line is eps(K) = 0.1 + 0.14 (K - 4)
    for K, eps in pts:
        assert math.isclose(eps, 0.1 + 0.14 * (K - 4.0), abs_tol=1e-12)
    assert math.isclose(EXPERIMENTAL_PATH.epsilon_at(5.0), 0.24)


@given(st.floats(4.0, 9.0))
def test_path_epsilon_affine(K):
    path = EXPERIMENTAL_PATH
    f = (K - path.k_start) / (path.k_end - path.k_start)
    expect = path.eps_start + f * (path.eps_end - path.eps_start)
    assert math.isclose(path.epsilon_at(K), expect, abs_tol=1e-12)


def test_single_point_path():
    path = SweepPath(5.0, 5.0, 0.2, 0.2, 1)
    assert path.points() == [(5.0, 0.2)]
    assert path.epsilon_at(99.0) == 0.2


@pytest.mark.parametrize("kwargs", [
    {"n_points": 0},
    {"n_points": 2.5},
    {"k_start": 0.0},
    {"eps_start": -0.1},
    {"eps_end": 1.5},
])
def test_sweep_path_validation(kwargs):
    base = dict(k_start=4.0, k_end=9.0, eps_start=0.1, eps_end=0.8,
                n_points=20)
    base.update(kwargs)
    with pytest.raises(ParameterError):
        SweepPath(**base)


def test_load_config_defaults():
    cfg = load_config()
    assert cfg == CONFIG_DEFAULTS
    assert cfg is not CONFIG_DEFAULTS  # caller owns a copy
    assert rotor_from_config(cfg) == RotorParams()
    assert sweep_from_config(cfg) == EXPERIMENTAL_PATH


def test_load_config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[rotor]\nk = 5.5\nepsilon = 0.24\n"
        "[ensemble]\nn_traj = 50\ninitial_kind = thermal\n"
        "[grid]\nauto = off\n")
    cfg = load_config(str(path))
    assert cfg["rotor"]["k"] == 5.5
    assert cfg["rotor"]["kbar"] == 2.85  # untouched default
    assert cfg["ensemble"]["n_traj"] == 50
    assert cfg["ensemble"]["initial_kind"] == "thermal"
    assert cfg["grid"]["auto"] is False


def test_load_config_overrides_win(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[rotor]\nk = 5.5\n")
    cfg = load_config(str(path), {"rotor": {"k": 7.0, "kbar": None}})
    assert cfg["rotor"]["k"] == 7.0     # override beats the file
    assert cfg["rotor"]["kbar"] == 2.85  # None override is a no-op


@pytest.mark.parametrize("text", [
    "[nosuch]\nk = 1\n",
    "[rotor]\nnosuch = 1\n",
    "[rotor]\nk = banana\n",
    "[grid]\nauto = maybe\n",
])
def test_load_config_rejects(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ParameterError):
        load_config(str(path))


def test_load_config_missing_file():
    with pytest.raises(ParameterError):
        load_config("/nonexistent/qpkr.ini")


def test_format_rotor_params():
    text = format_rotor_params(RotorParams(K=5.0))
    assert text.startswith("resolved rotor parameters:")
    assert "K        = 5" in text
    assert "omega2" in text and "eta_g" in text
