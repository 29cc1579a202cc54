import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import rel_close
from delayreg.factorization import (
    CoprimeFactorization,
    FactorizationError,
    FirDelayParameter,
    ImproperPlant,
    InvalidMu,
    InvalidPole,
    UnstableFactor,
    assemble_controller,
    assemble_sensitivity,
    check_factor_stability,
    compute_up,
    factorize_by_shift,
    factorize_delayed_first_order,
    factorize_pi,
    factorize_static,
)
from delayreg.quasipoly import DelayRational

RETARDED = DelayRational.from_terms([(0, [1.0])], [(0, [-2.0, 1.0]), (1.0, [-1.0])])
NEUTRAL = DelayRational.from_terms([(0, [1.0])], [(0, [-3, 1]), (1, [0, -0.5]), (1.5, [-2])])
PROBES = [0.3j, 1 + 2j, 25.1327j, -0.5 + 7j]


@pytest.mark.parametrize("s", PROBES)
def test_pi_ratio_recovers_controller(s):
    f = factorize_pi(10.0, 10.0)
    assert f.ratio(s) == pytest.approx((10 * s + 10) / s)
    assert f.n.is_proper and f.d.is_proper


@pytest.mark.parametrize("pole", [0.0, -1.0])
def test_pi_rejects_bad_pole(pole):
    with pytest.raises(InvalidPole):
        factorize_pi(1.0, 1.0, pole)


def test_pi_needs_a_gain():
    with pytest.raises(FactorizationError):
        factorize_pi(0.0, 0.0)
    assert factorize_static(0.0).ratio(1j) == 0


@pytest.mark.parametrize("s", PROBES)
def test_first_order_factor_ratio(s):
    f = factorize_delayed_first_order(1.0, 0.5, 100.0)
    assert f.ratio(s) == pytest.approx(np.exp(-0.5 * s) / (s - 1))
    # denominator of both factors: (s + 10)^2
    assert f.n.den(-10.0) == pytest.approx(0.0)


def test_first_order_rejects_bad_mu():
    with pytest.raises(InvalidMu):
        factorize_delayed_first_order(1.0, 0.5, 0.0)


@pytest.mark.parametrize("plant", [RETARDED, NEUTRAL])
@pytest.mark.parametrize("s", PROBES)
def test_shift_factor_ratio(plant, s):
    f = factorize_by_shift(plant, 1.0)
    assert f.ratio(s) == pytest.approx(plant(s))
    assert f.n.is_proper and f.d.is_proper


def test_shift_rejects_improper():
    improper = DelayRational.from_terms([(0, [0.0, 0.0, 1.0])], [(0, [1.0, 1.0])])
    with pytest.raises(ImproperPlant):
        factorize_by_shift(improper)


def test_up_for_retarded_example():
    up = compute_up(factorize_by_shift(RETARDED), factorize_pi(10.0, 10.0))
    for s in PROBES:
        expected = (s**2 + 8 * s + 10 - s * np.exp(-s)) / (s + 1) ** 2
        assert up(s) == pytest.approx(expected)


def test_factor_stability_check():
    check_factor_stability(factorize_by_shift(RETARDED), "plant.")
    bad = CoprimeFactorization(RETARDED, DelayRational.constant(1.0), RETARDED)
    with pytest.raises(UnstableFactor) as info:
        check_factor_stability(bad, "x.")
    assert info.value.root.real == pytest.approx(2.1200282389876, abs=1e-9)


class TestFirDelayParameter:
    def test_evaluation(self):
        q = FirDelayParameter(0.05, (0.0, -21.3792, 13.2131, -13.2131, 21.3792))
        s = 2j
        direct = sum(a * np.exp(-s * 0.05 * k) for k, a in enumerate(q.gains))
        assert q(s) == pytest.approx(direct)
        assert q.as_rational()(s) == pytest.approx(direct)
        assert q.count == 4 and q.span == pytest.approx(0.2)

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError):
            FirDelayParameter(0.0, (1.0,))

    def test_combine_requires_same_structure(self):
        with pytest.raises(ValueError):
            FirDelayParameter(0.1, (1.0, 2.0)).combine(1.0, FirDelayParameter(0.2, (1.0, 2.0)), 1.0)


gains = st.lists(st.floats(-30, 30), min_size=3, max_size=3)


@given(gains, gains, st.floats(0, 1), st.floats(0.1, 300))
def test_sensitivity_is_affine_in_qm(g1, g2, lam, w):
    pf, cf = factorize_by_shift(RETARDED), factorize_pi(10.0, 10.0)
    q1, q2 = FirDelayParameter(0.05, g1), FirDelayParameter(0.05, g2)
    mix = q1.combine(lam, q2, 1 - lam)
    s = 1j * w
    lhs = assemble_sensitivity(pf, cf, mix)(s)
    rhs = lam * assemble_sensitivity(pf, cf, q1)(s) + (1 - lam) * assemble_sensitivity(pf, cf, q2)(s)
    assert rel_close(lhs, rhs, 1e-9)


@given(gains, st.floats(0.1, 100))
def test_sensitivity_matches_loop_formula(g, w):
    pf, cf = factorize_by_shift(RETARDED), factorize_pi(10.0, 10.0)
    q = FirDelayParameter(0.05, g)
    s = 1j * w
    C = assemble_controller(pf, cf, q)(s)
    G = RETARDED(s)
    loop = 1 / (1 + G * C)
    if math.isfinite(abs(loop)) and abs(1 + G * C) > 1e-6:
        assert rel_close(assemble_sensitivity(pf, cf, q)(s), loop, 1e-7)


def test_zero_parameter_recovers_base_loop():
    pf, cf = factorize_by_shift(RETARDED), factorize_pi(10.0, 10.0)
    s = 3j
    S = assemble_sensitivity(pf, cf, FirDelayParameter.zeros(0.05, 4))(s)
    assert S == pytest.approx(1 / (1 + RETARDED(s) * (10 * s + 10) / s))
