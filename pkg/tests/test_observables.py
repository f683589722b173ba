import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpkr.errors import ParameterError
from qpkr.observables import (
    AnomalousFit,
    Distribution,
    EnsembleSeries,
    fit_anomalous_diffusion,
    fit_exponential_localization,
    fit_gaussian_shape,
    lambda_series,
    localization_time_estimate,
    localization_time_from_diffusion,
    p2_from_lambda,
    pi0,
    read_series,
    write_distributions,
    write_series,
)
from qpkr.params import RotorParams


def lattice(half):
    return np.arange(-half, half + 1, dtype=float)


def normalized(density):
    return density / density.sum()


def exponential_dist(ell, half=300, noise=0.0, seed=0):
    p = lattice(half)
    density = np.exp(-np.abs(p) / ell)
    if noise:
        rng = np.random.default_rng(seed)
        density *= np.exp(noise * rng.standard_normal(p.shape))
    return Distribution(p=p, density=normalized(density))


def gaussian_dist(sigma, half=300, noise=0.0, seed=0):
    p = lattice(half)
    density = np.exp(-p**2 / (2.0 * sigma**2))
    if noise:
        rng = np.random.default_rng(seed)
        density *= np.exp(noise * rng.standard_normal(p.shape))
    return Distribution(p=p, density=normalized(density))


def make_series(times, p2, sem=None, **kwargs):
    times = np.asarray(times)
    p2 = np.asarray(p2, dtype=float)
    if sem is None:
        sem = 0.01 * p2
    return EnsembleSeries(params=RotorParams(), times=times, p2_mean=p2,
                          p2_sem=sem, n_traj=100, **kwargs)


def test_distribution_moments():
    d = Distribution(p=[-1.0, 0.0, 1.0], density=[1 / 3] * 3)
    assert math.isclose(d.mass(), 1.0)
    assert math.isclose(d.second_moment(), 2.0 / 3.0)
    # two-point mass at +-1: m4/m2^2 - 3 = 1/(4/9) wait, direct value
    assert math.isclose(d.excess_kurtosis(), (2 / 3) / (2 / 3) ** 2 - 3.0)


def test_distribution_validation():
    with pytest.raises(ParameterError):
        Distribution(p=[0.0, 1.0], density=[0.5])
    with pytest.raises(ParameterError):
        Distribution(p=[0.0, 1.0], density=[0.7, -0.2])


def test_gaussian_kurtosis_near_zero():
    d = gaussian_dist(sigma=30.0, half=400)
    assert abs(d.excess_kurtosis()) < 1e-3


def test_pi0_single_bin():
    d = gaussian_dist(sigma=20.0, half=200)
    center = d.density[200]
    assert math.isclose(pi0(d, 0.5), center, rel_tol=1e-12)


def test_pi0_window_average():
    d = gaussian_dist(sigma=20.0, half=200)
    # bins -2..2 fall fully inside |p| <= 2.5
    expect = d.density[198:203].sum() / 5.0
    assert math.isclose(pi0(d, 2.5), expect, rel_tol=1e-12)


def test_pi0_validation():
    d = gaussian_dist(sigma=20.0)
    with pytest.raises(ParameterError):
        pi0(d, 0.4)  # below bin resolution
    unnorm = Distribution(p=d.p, density=2.0 * d.density)
    with pytest.raises(ParameterError):
        pi0(unnorm, 0.5)


def test_exponential_fit_exact():
    fit = fit_exponential_localization(exponential_dist(ell=7.0))
    assert fit.accepted
    assert math.isclose(fit.ell, 7.0, rel_tol=1e-9)


def test_exponential_fit_noisy():
    fit = fit_exponential_localization(exponential_dist(ell=10.0, noise=0.01,
                                                        seed=4))
    assert fit.accepted
    assert abs(fit.ell - 10.0) < 0.2
    assert 0 < fit.ell_err < 0.2
    assert fit.goodness < 5.0


def test_exponential_fit_rejects_gaussian():
    fit = fit_exponential_localization(gaussian_dist(sigma=25.0, noise=0.01,
                                                     seed=2))
    assert not fit.accepted
    assert fit.goodness > 5.0


def test_gaussian_fit_recovers_sigma():
    fit = fit_gaussian_shape(gaussian_dist(sigma=25.0, noise=0.01, seed=3))
    assert fit.accepted
    assert abs(fit.sigma - 25.0) < 0.5
    assert 0 < fit.sigma_err < 0.5


def test_gaussian_fit_rejects_exponential():
    fit = fit_gaussian_shape(exponential_dist(ell=10.0, noise=0.01, seed=5))
    assert not fit.accepted


def test_fit_window_caps_dynamic_range():
    # a wrong-shaped far tail 30 decades down must not drag the fit:
    # only the top ~5 decades of the folded density are used
    p = lattice(400)
    density = np.exp(-np.abs(p) / 3.0)
    density[np.abs(p) > 60] = 1e-25  # flat transient floor, wrong shape
    fit = fit_exponential_localization(
        Distribution(p=p, density=normalized(density)))
    assert fit.accepted
    assert abs(fit.ell - 3.0) < 0.05
    assert fit.fit_window[1] <= 60.0


def test_fit_handles_tiny_support():
    # support entirely below q_min: nothing to fit at all
    d = Distribution(p=[-1.0, 0.0, 1.0], density=[0.25, 0.5, 0.25])
    with pytest.raises(ParameterError):
        fit_exponential_localization(d)
    # steep profile leaves only two bins clear of the noise floor:
    # too few points, rejected rather than fitted
    fit = fit_exponential_localization(exponential_dist(ell=0.8, half=5))
    assert not fit.accepted
    assert math.isnan(fit.ell)


def test_lambda_series_trivial_oracles():
    t = np.array([10, 100, 1000])
    crit = make_series(t, t.astype(float) ** (2.0 / 3.0))
    _, lam, sig = lambda_series(crit)
    assert np.allclose(lam, 1.0)
    diff = make_series(t, 4.0 * t.astype(float))
    _, lam, _ = lambda_series(diff)
    assert np.allclose(lam, 4.0 * t ** (1.0 / 3.0))
    loc = make_series(t, np.full(3, 50.0))
    _, lam, _ = lambda_series(loc)
    assert np.allclose(lam, 50.0 * t ** (-2.0 / 3.0))


@given(st.lists(st.floats(0.1, 1e6), min_size=2, max_size=8))
def test_lambda_roundtrip(p2):
    t = np.arange(1, len(p2) + 1) * 10
    series = make_series(t, p2)
    times, lam, _ = lambda_series(series)
    assert np.allclose(p2_from_lambda(times, lam), p2, rtol=1e-12)


def test_lambda_series_pi0_variant():
    t = np.array([50, 150])
    series = make_series(t, np.array([40.0, 41.0]))
    with pytest.raises(ParameterError):
        lambda_series(series, use_pi0=True)
    series.distributions = {150: exponential_dist(ell=4.0, half=100)}
    series.attach_pi0()
    assert math.isnan(series.pi0[0]) and np.isfinite(series.pi0[1])
    with pytest.raises(ParameterError):
        lambda_series(series, use_pi0=True)  # still NaN at t=50

    series.distributions[50] = exponential_dist(ell=4.0, half=100)
    series.attach_pi0()
    _, lam, _ = lambda_series(series, use_pi0=True)
    expect = 1.0 / (series.pi0**2 * t ** (2.0 / 3.0))
    assert np.allclose(lam, expect)


def test_anomalous_fit_recovers_exponent():
    t = np.unique(np.geomspace(10, 10_000, 40).astype(int))
    rng = np.random.default_rng(9)
    p2 = 4.0 * t.astype(float) ** 0.66 * np.exp(
        0.005 * rng.standard_normal(len(t)))
    series = make_series(t, p2, sem=0.005 * p2)
    fit = fit_anomalous_diffusion(series, (10, 10_000))
    assert isinstance(fit, AnomalousFit)
    assert abs(fit.k - 0.66) < 0.01
    assert not fit.curved


def test_anomalous_fit_flags_curvature():
    t = np.unique(np.geomspace(10, 10_000, 40).astype(int))
    lt = np.log(t.astype(float))
    p2 = np.exp(0.66 * lt + 0.05 * (lt - lt.mean()) ** 2)
    series = make_series(t, p2, sem=0.002 * p2)
    fit = fit_anomalous_diffusion(series, (10, 10_000))
    assert fit.curved
    assert fit.curvature > 0


def test_anomalous_fit_offset_form():
    t = np.unique(np.geomspace(30, 3000, 25).astype(int))
    p2 = 100.0 + 2.0 * t.astype(float) ** (2.0 / 3.0)
    series = make_series(t, p2, sem=np.full(len(t), 0.5))
    fit = fit_anomalous_diffusion(series, (30, 3000), offset_form=True)
    assert math.isclose(fit.offset, 100.0, rel_tol=1e-6)
    assert math.isclose(fit.prefactor, 2.0, rel_tol=1e-6)


def test_anomalous_fit_window_validation():
    t = np.unique(np.geomspace(10, 10_000, 30).astype(int))
    series = make_series(t, t.astype(float))
    with pytest.raises(ParameterError):
        fit_anomalous_diffusion(series, (100, 1000))  # 1 decade only
    with pytest.raises(ParameterError):
        fit_anomalous_diffusion(series, (9000, 300_000))  # 2 points inside


def test_series_io_roundtrip():
    series = make_series(np.array([10, 50, 150]),
                         np.array([5.0, 25.0, 31.0]),
                         sem=np.array([0.5, 1.0, 1.5]),
                         saturated=np.array([False, False, True]),
                         run_id="abc123", source="quantum")
    series.distributions = {150: exponential_dist(ell=4.0, half=50)}
    sbuf, dbuf = io.StringIO(), io.StringIO()
    write_series(series, sbuf)
    write_distributions(series, dbuf)
    sbuf.seek(0)
    dbuf.seek(0)
    back = read_series(sbuf, dbuf)
    assert np.array_equal(back.times, series.times)
    assert np.array_equal(back.p2_mean, series.p2_mean)  # %.17g round-trip
    assert np.array_equal(back.p2_sem, series.p2_sem)
    assert np.array_equal(back.saturated, series.saturated)
    assert back.n_traj == series.n_traj
    assert back.run_id == "abc123" and back.source == "quantum"
    assert back.params.K == series.params.K
    dist = back.distributions[150]
    assert np.array_equal(dist.density, series.distributions[150].density)


def test_series_validation():
    with pytest.raises(ParameterError):
        make_series(np.array([10, 10]), np.array([1.0, 2.0]))
    with pytest.raises(ParameterError):
        make_series(np.array([10, 20]), np.array([1.0, -2.0]))
    with pytest.raises(ParameterError):
        make_series(np.array([10, 20]), np.array([1.0]))


def test_localization_time():
    assert localization_time_from_diffusion(10.0) == 5.0
    with pytest.raises(ParameterError):
        localization_time_from_diffusion(0.0)
    est = localization_time_estimate(RotorParams(K=5.0, kbar=2.89,
                                                 epsilon=0.0),
                                     n_traj=5000, t_max=150)
    # tau_loc = kbar^2 D_pfrak / 2, in kicks
    assert math.isclose(est.tau_loc, 2.89**2 * est.D_pfrak / 2.0,
                        rel_tol=1e-12)
    assert est.tau_loc > 0
