import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eland.potentials import (
    Potential,
    PotentialError,
    check_assumptions,
    cubic_genetics,
    double_well,
    evaluate,
    multi_well,
    polynomial,
    pure_power,
    truncate_to_wells,
)

ALL = [
    double_well(),
    double_well(mu=2.0),
    pure_power(3.0),
    pure_power(1.5),
    cubic_genetics(0.3),
    multi_well([(1.0, 0.25), (2.0, 0.0)]),
    polynomial([0.25, 0.0, -0.5, 0.0, 0.25], mu=1.0),
]


def test_double_well_closed_form():
    W = double_well()
    t = np.linspace(-1.5, 1.5, 101)
    np.testing.assert_allclose(W.W(t), (t**2 - 1) ** 2 / 4, atol=1e-15)
    np.testing.assert_allclose(W.dW(t), t**3 - t, atol=1e-14)
    np.testing.assert_allclose(W.d2W(t), 3 * t**2 - 1, atol=1e-14)


def test_double_well_bitwise_even():
    W = double_well()
    t = np.random.default_rng(1).uniform(-2, 2, 1000)
    assert np.array_equal(W.W(t), W.W(-t))


def test_polynomial_matches_double_well():
    P = polynomial([0.25, 0.0, -0.5, 0.0, 0.25], mu=1.0)
    t = np.linspace(0, 1, 51)
    np.testing.assert_allclose(P.W(t), double_well().W(t), atol=1e-14)


def test_pure_power_gap_relative_precision():
    W = pure_power(3.0)
    w = np.geomspace(1e-12, 1, 30)
    np.testing.assert_allclose(W.gap(w, 0), w**4, rtol=1e-13)
    np.testing.assert_allclose(W.gap(w, 1), -4 * w**3, rtol=1e-13)


def test_cubic_genetics_derivative():
    a = 0.3
    W = cubic_genetics(a)
    t = np.linspace(0, 1, 41)
    np.testing.assert_allclose(W.dW(t), t * (t - a) * (t - 1), atol=1e-14)
    assert W.W(1.0) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("pot", ALL, ids=lambda p: p.kind)
def test_derivatives_match_finite_differences(pot):
    t = np.linspace(0.05, pot.mu - 0.05, 37)
    d = 1e-5
    fd1 = (pot.W(t + d) - pot.W(t - d)) / (2 * d)
    fd2 = (pot.dW(t + d) - pot.dW(t - d)) / (2 * d)
    np.testing.assert_allclose(pot.dW(t), fd1, atol=1e-8)
    np.testing.assert_allclose(pot.d2W(t), fd2, atol=1e-7)


@pytest.mark.parametrize("pot", ALL, ids=lambda p: p.kind)
def test_well_at_mu(pot):
    assert abs(pot.W(pot.mu)) < 1e-13
    assert abs(pot.dW(pot.mu)) < 1e-12
    t = np.linspace(0, pot.mu, 200, endpoint=False)
    assert np.all(pot.W(t) > 0)


@given(st.floats(0.0, 1.0))
def test_gap_and_t_forms_agree(w):
    for pot in ALL:
        assert pot.gap(w, 0) == pytest.approx(pot.W(pot.mu - w), rel=1e-12, abs=1e-14)


def test_multi_well_product_form():
    W = multi_well([(1.0, 0.25), (2.0, 0.0)])
    assert W.mu == 2.0
    assert W.W(1.0) == pytest.approx(0.25, abs=1e-13)
    assert W.dW(1.0) == pytest.approx(0.0, abs=1e-12)
    assert W.max_abs_d2W >= 15.0 - 1e-9


def test_truncation_zero_energy_at_inner_well():
    W = multi_well([(1.0, 0.25), (2.0, 0.0)])
    T = truncate_to_wells(W, 1)
    assert T.mu == pytest.approx(1.0)
    assert abs(T.W(1.0)) < 1e-13
    t = np.linspace(0, 0.9, 10)
    np.testing.assert_allclose(T.W(t), W.W(t) - 0.25, atol=1e-12)
    with pytest.raises(PotentialError):
        truncate_to_wells(W, 3)
    with pytest.raises(PotentialError):
        truncate_to_wells(double_well(), 1)


@pytest.mark.parametrize("pot", ALL, ids=lambda p: p.kind)
def test_json_round_trip(pot):
    back = Potential.from_json(pot.to_json())
    assert back == pot
    t = np.linspace(0, pot.mu, 11)
    assert np.array_equal(back.W(t), pot.W(t))


def test_json_errors():
    with pytest.raises(PotentialError):
        Potential.from_json("{kind")
    with pytest.raises(PotentialError):
        Potential.from_dict({"kind": "double_well", "color": 3})
    with pytest.raises(PotentialError):
        Potential.from_dict({"mu": 1.0})
    with pytest.raises(PotentialError):
        Potential.from_json(json.dumps([1, 2]))
    with pytest.raises(PotentialError):
        Potential("quartic")


def test_evaluate_guards():
    W = double_well()
    with pytest.raises(PotentialError):
        evaluate(W, 0.5, order=3)
    with pytest.raises(PotentialError):
        evaluate(W, np.array([0.0, np.nan]))
    assert isinstance(evaluate(W, 0.5, 1), float)


def test_assumptions_double_well():
    rep = check_assumptions(double_well(), resolution=1e-3)
    assert rep.a_prime and rep.monotone_b and rep.convex_near_mu
    assert rep.power_p == pytest.approx(1.0, abs=0.05)


def test_assumptions_pure_power_exponent():
    rep = check_assumptions(pure_power(3.0), resolution=1e-3)
    assert rep.power_p == pytest.approx(3.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 3.0))
def test_double_well_scaling(mu):
    W = double_well(mu=mu)
    assert W.W(0.0) == pytest.approx(mu**4 / 4, rel=1e-14)
    assert W.max_abs_d2W == pytest.approx(2 * mu**2, rel=1e-6)
    assert math.isclose(W.dW(mu), 0.0, abs_tol=1e-12 * mu**3)


def test_assumptions_cubic_genetics():
    rep = check_assumptions(cubic_genetics(0.3), resolution=1e-3)
    assert rep.a_prime
    assert not rep.monotone_b  # W' > 0 on (0, a)


@pytest.mark.parametrize("i", [1, 2])
def test_assumptions_truncated_wells(i):
    W = truncate_to_wells(multi_well([(1.0, 0.25), (2.0, 0.0)]), i)
    assert check_assumptions(W, resolution=1e-3).a_prime
