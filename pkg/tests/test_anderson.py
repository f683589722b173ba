import math

import numpy as np
import pytest
from scipy import integrate, stats

from qpkr.anderson import (
    CommensurabilityReport,
    HoppingCoefficients,
    build_lattice_1d,
    build_lattice_3d,
    commensurability_check,
    floquet_localization_lengths,
    hopping_coefficients_1d,
    hopping_coefficients_3d,
    hopping_decay_rate,
    onsite_energies_1d,
    onsite_energies_3d,
    period_search,
    reconstruct_kernel,
)
from qpkr.errors import ParameterError, SingularKickError
from qpkr.params import RotorParams

TWO_PI = 2.0 * math.pi


def test_onsite_formula():
    e = onsite_energies_1d(2.89, 0.37, range(-3, 4))
    m = np.arange(-3, 4)
    expect = np.tan(0.5 * (0.37 - m**2 * 2.89 / 2.0))
    assert np.array_equal(e.values, expect)
    assert e.dimension == 1
    assert not e.pole_mask.any()


def test_onsite_pole_flagged():
    # omega = pi puts the m = 0 argument exactly on the tangent pole
    e = onsite_energies_1d(2.89, math.pi, range(-2, 3))
    assert e.pole_mask[2]
    assert e.pole_mask.sum() == 1


def test_onsite_beta_shifts_ladder():
    base = onsite_energies_1d(2.89, 0.0, range(0, 3))
    shifted = onsite_energies_1d(2.89, 0.0, range(0, 3), beta=0.3)
    expect = np.tan(0.5 * (-(np.arange(3) + 0.3) ** 2 * 2.89 / 2.0))
    assert np.allclose(shifted.values, expect)
    assert not np.allclose(shifted.values, base.values)


def test_onsite_3d_reduces_to_1d():
    e3 = onsite_energies_3d(2.89, TWO_PI * math.sqrt(5.0),
                            TWO_PI * math.sqrt(13.0), 0.37,
                            (range(-5, 6), [0], [0]))
    e1 = onsite_energies_1d(2.89, 0.37, range(-5, 6))
    assert np.allclose(e3.values[:, 0, 0], e1.values)
    assert e3.dimension == 3


def test_onsite_3d_box_validation():
    with pytest.raises(ParameterError):
        onsite_energies_3d(2.89, 1.0, 2.0, 0.0, (range(3), range(3)))
    with pytest.raises(ParameterError):
        onsite_energies_1d(0.0, 0.0, range(3))


def test_onsite_distribution_is_cauchy():
    # the tangent of an equidistributed phase is Cauchy: arctan-transformed
    # values must look uniform
    e = onsite_energies_1d(2.89, 0.3, range(1, 5001))
    u = np.arctan(e.values[~e.pole_mask]) / math.pi + 0.5
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_hopping_small_k_taylor():
    # tan(K cos x / (2 kbar)) ~ K cos x / (2 kbar) for small K, so
    # W_1 = W_{-1} = K / (4 kbar) to leading order
    h = hopping_coefficients_1d(0.01, 2.89)
    assert math.isclose(h.at(1), 0.01 / (4.0 * 2.89), rel_tol=1e-4)
    assert math.isclose(h.at(-1), h.at(1), rel_tol=1e-12)


def test_hopping_even_harmonics_vanish():
    h = hopping_coefficients_1d(5.0, 2.89)
    for r in (0, 2, 4, 8, 16):
        assert abs(h.at(r)) < 1e-14


def test_hopping_symmetric():
    h = hopping_coefficients_1d(5.0, 2.89)
    for r in (1, 3, 7, 15):
        assert math.isclose(h.at(r), h.at(-r), rel_tol=1e-12)


def test_hopping_quadrature_oracle():
    K, kbar = 5.0, 2.89
    h = hopping_coefficients_1d(K, kbar)
    for r in (1, 3, 5, 9, 15):
        val, err = integrate.quad(
            lambda x: math.tan(K * math.cos(x) / (2 * kbar)) * math.cos(r * x),
            0.0, math.pi, limit=200)
        assert err < 1e-10
        assert abs(h.at(r) - val / math.pi) < 1e-8


def test_hopping_quadrature_oracle_mpmath():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 30
    K, kbar = 5.0, 2.89
    h = hopping_coefficients_1d(K, kbar)
    for r in (1, 3):
        val = mp.quad(lambda x: mp.tan(K * mp.cos(x) / (2 * kbar))
                      * mp.cos(r * x), [0, mp.pi]) / mp.pi
        assert abs(h.at(r) - float(val)) < 1e-10


def test_kernel_resummation():
    K, kbar = 5.0, 2.89
    h = hopping_coefficients_1d(K, kbar, r_max=64)
    x = np.linspace(0.0, TWO_PI, 37)
    resummed = reconstruct_kernel(h, x)
    kernel = np.tan(K * np.cos(x) / (2.0 * kbar))
    assert np.max(np.abs(resummed - kernel)) < 1e-8


def test_hopping_decay_rate_frozen():
    h = hopping_coefficients_1d(5.0, 2.89)
    gamma, gamma_err = hopping_decay_rate(h)
    assert math.isclose(gamma, 1.20398, abs_tol=5e-3)
    assert 0 < gamma_err < 0.01


def test_hopping_decay_rate_validation():
    h3 = hopping_coefficients_3d(5.0, 0.3, 2.89, r_max=4, n_samples=32)
    with pytest.raises(ParameterError):
        hopping_decay_rate(h3)
    h = hopping_coefficients_1d(5.0, 2.89, r_max=4)
    with pytest.raises(ParameterError):
        hopping_decay_rate(h, r_lo=3, r_hi=4)  # one odd offset only


def test_singular_kick_rejected():
    with pytest.raises(SingularKickError):
        hopping_coefficients_1d(4.0, 1.0)  # K >= pi * kbar
    # the bound includes the modulation peak K (1 + eps)
    with pytest.raises(SingularKickError):
        hopping_coefficients_3d(10.0, 0.8, 2.89)
    # same K is fine unmodulated: 10 < pi * 2.89 * ... just below pi*kbar
    hopping_coefficients_3d(9.0, 0.0, 2.89, r_max=4, n_samples=32)


def test_hopping_3d_factorizes_at_zero_epsilon():
    K, kbar = 5.0, 2.89
    h3 = hopping_coefficients_3d(K, 0.0, kbar, r_max=6, n_samples=64)
    h1 = hopping_coefficients_1d(K, kbar, r_max=6)
    for r in range(-6, 7):
        assert abs(h3.at(r, 0, 0) - h1.at(r)) < 1e-12
    # no transverse structure at all without modulation
    off_axis = h3.values.copy()
    off_axis[:, 6, 6] = 0.0  # zero out the (r2, r3) = (0, 0) plane
    assert np.max(np.abs(off_axis)) < 1e-14


def test_hopping_3d_linear_in_epsilon():
    base = hopping_coefficients_3d(5.0, 0.01, 2.89, r_max=3, n_samples=32)
    double = hopping_coefficients_3d(5.0, 0.02, 2.89, r_max=3, n_samples=32)
    w1 = base.at(1, 1, 1)
    w2 = double.at(1, 1, 1)
    assert w1 != 0.0
    assert math.isclose(w2 / w1, 2.0, rel_tol=0.01)


def test_hopping_validation():
    with pytest.raises(ParameterError):
        hopping_coefficients_1d(-1.0, 2.89)
    with pytest.raises(ParameterError):
        hopping_coefficients_1d(5.0, 2.89, r_max=-1)
    with pytest.raises(ParameterError):
        hopping_coefficients_1d(5.0, 2.89, n_samples=8)
    h = hopping_coefficients_1d(5.0, 2.89, r_max=4)
    with pytest.raises(ParameterError):
        h.at(5)
    with pytest.raises(ParameterError):
        h.at(1, 0)


def test_build_lattices():
    params = RotorParams(K=5.0, kbar=2.89, epsilon=0.3)
    lat1 = build_lattice_1d(params, range(-8, 9), omega=0.2)
    assert lat1.dimension == 1
    assert lat1.quasienergy == 0.2
    assert lat1.hopping.K == 5.0
    lat3 = build_lattice_3d(params, (range(-4, 5), range(-4, 5),
                                     range(-4, 5)), r_max=3)
    assert lat3.dimension == 3
    assert lat3.onsite.values.shape == (9, 9, 9)


def test_commensurability_flags_exact_resonance():
    # 2 * (pi/2) - pi = 0 exactly
    report = commensurability_check(math.pi / 2.0, TWO_PI * math.sqrt(5.0),
                                    TWO_PI * math.sqrt(13.0))
    assert isinstance(report, CommensurabilityReport)
    assert not report.clean
    hit = report.flags[0]
    assert hit.coefficients == (2, 0, 0, -1)
    assert abs(hit.residual) < 1e-12
    # sign canonical: first nonzero coefficient positive
    for flag in report.flags:
        first = next(c for c in flag.coefficients if c != 0)
        assert first > 0


def test_commensurability_clean_at_tight_tol():
    report = commensurability_check(2.85, TWO_PI * math.sqrt(5.0),
                                    TWO_PI * math.sqrt(13.0), tol=1e-6)
    assert report.clean


def test_commensurability_pairs():
    report = commensurability_check(3.0, 2.0, 13.0, tol=1e-9, q_max=10)
    by_pair = {p.pair: p for p in report.pairs}
    approx = by_pair[("kbar", "omega2")]
    assert (approx.numerator, approx.denominator) == (3, 2)
    assert approx.error < 1e-15
    assert len(report.pairs) == 6  # all pairs of the four frequencies


def test_commensurability_validation():
    with pytest.raises(ParameterError):
        commensurability_check(2.85, 1.0, 2.0, q_max=1)
    with pytest.raises(ParameterError):
        commensurability_check(2.85, 1.0, 2.0, tol=0.0)
    with pytest.raises(ParameterError):
        commensurability_check(2.85, 1.0, 2.0, q_max=10_000)


def test_period_search_rational():
    # kbar = 2 pi: kbar p = 0 (mod 2 pi) always, kbar p^2 = 0 (mod 4 pi)
    # needs even p
    assert period_search(TWO_PI, 20).tolist() == [2, 4, 6, 8, 10,
                                                  12, 14, 16, 18, 20]
    assert period_search(4.0 * math.pi / 7.0, 30).tolist() == [7, 14, 21, 28]


def test_period_search_verified_on_onsite_values():
    kbar = 4.0 * math.pi / 7.0
    p = int(period_search(kbar, 30)[0])
    e = onsite_energies_1d(kbar, 0.3, range(0, 40))
    ok = ~(e.pole_mask[: 40 - p] | e.pole_mask[p:])
    assert np.allclose(e.values[p:][ok], e.values[: 40 - p][ok],
                       rtol=1e-6, atol=1e-6)


def test_period_search_irrational_empty():
    assert period_search(2.89, 10_000).size == 0
    with pytest.raises(ParameterError):
        period_search(2.89, 0)


def test_floquet_states_localized():
    # periodic rotor at K = 5: eigenvectors decay on the same scale as the
    # dynamically measured localization length (the eigenvector density
    # falls twice as fast as the ensemble-averaged distribution)
    res = floquet_localization_lengths(5.0, 2.89, n=256)
    assert res.n_accepted > 0.8 * res.n_states
    assert 0.5 < res.median_length < 5.0
