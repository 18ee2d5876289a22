import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eland.potentials import cubic_genetics, double_well, pure_power
from eland.profile1d import (
    InsufficientData,
    compute_Dprime,
    compute_profile,
    fit_decay,
    fit_profile_decay,
)


@pytest.fixture(scope="module")
def dw_profile():
    return compute_profile(double_well(), 1 - 1e-8, 2000)


def test_tanh_oracle(dw_profile):
    s = np.linspace(0, 8, 401)
    np.testing.assert_allclose(dw_profile(s), np.tanh(s / math.sqrt(2)), atol=1e-8)
    np.testing.assert_allclose(
        dw_profile.derivative(s), 1 / (math.sqrt(2) * np.cosh(s / math.sqrt(2)) ** 2), atol=1e-6
    )


def test_gap_keeps_relative_precision(dw_profile):
    s = np.linspace(6, 12, 7)
    exact = 1 - np.tanh(s / math.sqrt(2))
    np.testing.assert_allclose(dw_profile.gap_at(s), exact, rtol=1e-5)


def test_first_integral(dw_profile):
    assert dw_profile.first_integral_residual < 1e-6
    assert dw_profile.slope0 == pytest.approx(math.sqrt(0.5), rel=1e-15)
    np.testing.assert_allclose(0.5 * dw_profile.uprime**2, double_well().W(dw_profile.u), atol=1e-14)


def test_csv_header(dw_profile):
    text = dw_profile.to_csv()
    assert text.splitlines()[0] == "s,U,Uprime,mu_minus_U"
    assert text.endswith("\n") and "\r" not in text


@pytest.mark.parametrize("eps", [0.5, 0.1, 1e-3, 1e-6])
def test_dprime_closed_form(eps):
    # U = tanh(s / sqrt2) reaches 1 - eps at sqrt2 atanh(1 - eps)
    assert compute_Dprime(double_well(), eps) == pytest.approx(math.sqrt(0.5) * math.log((2 - eps) / eps), rel=1e-12)


def test_dprime_pure_power_closed_form():
    # W = (1 - t)^4 gives mu - U = 1 / (1 + sqrt2 s)
    for eps in (0.5, 0.1, 0.01):
        assert compute_Dprime(pure_power(3.0), eps) == pytest.approx((1 / eps - 1) / math.sqrt(2), rel=1e-12)


def test_pure_power_profile_closed_form():
    prof = compute_profile(pure_power(3.0), 1 - 1e-4, 2000)
    s = np.linspace(0, prof.s_max, 300)
    np.testing.assert_allclose(prof.gap_at(s), 1 / (1 + math.sqrt(2) * s), rtol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 0.9), st.floats(1e-3, 0.9))
def test_dprime_monotone_in_eps(e1, e2):
    lo, hi = sorted((e1, e2))
    if hi - lo < 1e-9:
        return
    W = cubic_genetics(0.3)
    assert compute_Dprime(W, lo) > compute_Dprime(W, hi)


def test_dprime_rejects_eps():
    with pytest.raises(ValueError):
        compute_Dprime(double_well(), 0.0)
    with pytest.raises(ValueError):
        compute_Dprime(double_well(), 1.0)
    with pytest.raises(ValueError):
        compute_profile(double_well(), 1.0)


def test_profile_monotone(dw_profile):
    assert np.all(np.diff(dw_profile.u) > 0)
    assert np.all(np.diff(dw_profile.s) > 0)


def test_profile_decay_rate(dw_profile):
    fit = fit_profile_decay(dw_profile, (4.0, 10.0))
    assert fit.model == "exp"
    assert fit.rate == pytest.approx(math.sqrt(2), rel=0.01)
    with pytest.raises(InsufficientData):
        fit_profile_decay(dw_profile, (4.0, 1e3))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.1, 10.0))
def test_fit_recovers_exponential(rate, C):
    x = np.linspace(1, 10, 200)
    fit = fit_decay(x, C * np.exp(-rate * x), (1, 10))
    assert fit.model == "exp"
    assert fit.rate == pytest.approx(rate, rel=1e-8)
    assert fit.constant == pytest.approx(C, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 4.0), st.floats(0.1, 10.0))
def test_fit_recovers_power_law(p, C):
    x = np.linspace(2, 200, 300)
    fit = fit_decay(x, C * x**-p, (2, 200))
    assert fit.model == "alg"
    assert fit.rate == pytest.approx(p, rel=1e-8)


def test_fit_needs_points():
    with pytest.raises(InsufficientData):
        fit_decay(np.arange(5.0), np.ones(5), (0, 4))
