import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import Polynomial as P

from delayreg.factorization import FirDelayParameter, factorize_by_shift, factorize_pi
from delayreg.quasipoly import DelayRational
from delayreg.simulator import (
    AlgebraicLoop,
    FourierSignal,
    NotRealizable,
    SimScenario,
    StepMismatch,
    _evaluation_order,
    realize_dde,
    simulate_block,
    simulate_closed_loop,
    steady_state_residual,
)

# y' + y(t - 1) = u
DELAYED_DECAY = DelayRational.from_terms([(0, [1.0])], [(0, [0.0, 1.0]), (1.0, [1.0])])
RETARDED = DelayRational.from_terms([(0, [1.0])], [(0, [-2.0, 1.0]), (1.0, [-1.0])])


def method_of_steps(n: int) -> list:
    """Exact pieces of y' = -y(t - 1) with y = 1 on [-1, 0].

    Piece k is a polynomial in x = t - k on [k, k + 1].
    """
    pieces = [P([1.0])]  # the history
    for _ in range(n):
        anti = (-pieces[-1]).integ()
        pieces.append(anti - anti(0.0) + pieces[-1](1.0))
    return pieces[1:]


def oracle(t: float) -> float:
    k = max(0, math.ceil(t) - 1)
    return method_of_steps(k + 1)[k](t - k)


@pytest.mark.parametrize("t, exact", [(1.0, 0.0), (2.0, -0.5), (3.0, -1.0 / 6.0)])
def test_oracle_values(t, exact):
    assert oracle(t) == pytest.approx(exact, abs=1e-15)


def _decay_run(h, t_end=3.0):
    return simulate_block(DELAYED_DECAY, lambda t: 0.0, t_end, h, initial_output=1.0)


def test_delay_equation_matches_method_of_steps():
    t, y = _decay_run(1e-3)
    assert abs(y[2000] - (-0.5)) < 1e-6
    for tk in np.linspace(0, 3, 31):
        assert abs(y[int(round(tk / 1e-3))] - oracle(tk)) < 1e-6


def test_heun_second_order():
    errs = []
    for h in (1e-3, 5e-4):
        t, y = _decay_run(h)
        errs.append(np.max(np.abs(y - [oracle(x) for x in t])))
    assert errs[0] / errs[1] >= 3.0


@pytest.mark.parametrize(
    "block, exact",
    [
        (DelayRational.from_terms([(0, [1.0])], [(0, [1.0, 1.0])]), lambda t: t - 1 + np.exp(-t)),
        (
            DelayRational.from_terms([(0, [2.0, 1.0])], [(0, [1.0, 1.0])]),
            lambda t: 2 * t - 1 + np.exp(-t),
        ),
        (
            DelayRational.from_terms([(0, [2.0])], [(0, [2.0, 3.0, 1.0])]),
            lambda t: t - 1.5 + 2 * np.exp(-t) - 0.5 * np.exp(-2 * t),
        ),
        (
            DelayRational.from_terms([(0.5, [1.0])], [(0, [1.0, 1.0])]),
            lambda t: np.where(t >= 0.5, t - 1.5 + np.exp(-(t - 0.5)), 0.0),
        ),
    ],
)
def test_ramp_responses(block, exact):
    t, y = simulate_block(block, lambda t: t, 5.0, 1e-3)
    np.testing.assert_allclose(y, exact(t), atol=2e-6)


@pytest.mark.parametrize("w", [1.0, 4.0, 12.0])
def test_neutral_frequency_response(w):
    # s (1 - 0.5 e^{-s}) + 2: neutral, exponentially stable
    block = DelayRational.from_terms([(0, [1.0])], [(0, [2.0, 1.0]), (1.0, [0.0, -0.5])])
    t, y = simulate_block(block, lambda t: math.sin(w * t), 30.0, 1e-3)
    tail = y[t > 30.0 - 4 * math.pi / w]
    assert np.max(np.abs(tail)) == pytest.approx(abs(block(1j * w)), rel=1e-2)


def test_improper_block_rejected():
    with pytest.raises(NotRealizable):
        realize_dde(DelayRational.from_terms([(0, [0.0, 0.0, 1.0])], [(0, [1.0, 1.0])]))


def test_off_grid_delay():
    block = DelayRational.from_terms([(0.0015, [1.0])], [(0, [1.0, 1.0])])
    with pytest.raises(StepMismatch):
        simulate_block(block, lambda t: 1.0, 1.0, 1e-3)


def test_algebraic_loop_detected():
    sources = {"a": [(1.0, "b")], "b": [(1.0, "a")]}
    with pytest.raises(AlgebraicLoop):
        _evaluation_order(sources, {"a": 1.0, "b": 2.0})
    assert _evaluation_order(sources, {"a": 0.0, "b": 2.0}) == ["a", "b"]


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.5, 10))
def test_superposition(a, b, w):
    block = DelayRational.from_terms([(0.2, [1.0, 0.5])], [(0, [2.0, 3.0, 1.0]), (0.1, [0.5])])
    u1 = lambda t: math.sin(w * t)  # noqa: E731
    u2 = lambda t: 1.0 if t > 0.3 else 0.0  # noqa: E731
    _, y1 = simulate_block(block, u1, 1.0, 1e-2)
    _, y2 = simulate_block(block, u2, 1.0, 1e-2)
    _, y = simulate_block(block, lambda t: a * u1(t) + b * u2(t), 1.0, 1e-2)
    np.testing.assert_allclose(y, a * y1 + b * y2, atol=1e-9)


class TestFourierSignal:
    def test_value_and_peak(self):
        sig = FourierSignal(2.0, ((1.0, 0.0), (0.5, math.pi / 2)), 0.25)
        assert sig(0.0) == pytest.approx(1.0 + 1.0)
        assert sig.peak == pytest.approx(2.5)
        assert sig.scaled(2.0)(0.1) == pytest.approx(2 * sig(0.1))

    def test_periodic(self):
        sig = FourierSignal(0.0, ((1.0, 0.3), (2.0, 1.1)), 0.25)
        t = np.linspace(0, 1, 17)
        np.testing.assert_allclose(sig(t), sig(t + 0.25), atol=1e-12)


def _scenario(**kw):
    base = dict(
        plant_f=factorize_by_shift(RETARDED),
        ctrl_f=factorize_pi(10.0, 10.0),
        qm=FirDelayParameter(0.05, (0.0, -21.3792, 13.2131, -13.2131, 21.3792)),
        disturbance=FourierSignal(0.0, ((1.0, 0.0), (1.0, 0.0)), 0.25),
        t_disturbance_on=0.5,
        t_augmentation_on=1.0,
        t_end=2.0,
        h=1e-3,
    )
    base.update(kw)
    return SimScenario(**base)


@given(st.floats(0.0, 2.0), st.floats(0.01, 1.0))
def test_gate_is_continuous_with_ramp(t_on, ramp):
    sc = _scenario(t_augmentation_on=t_on, ramp=ramp)
    ts = np.linspace(0, 4, 4001)
    g = np.array([sc.gate(t) for t in ts])
    assert np.max(np.abs(np.diff(g))) <= 1e-3 / ramp + 1e-12
    assert g[0] == (1.0 if t_on == 0 else 0.0) or t_on == 0
    assert g[-1] == 1.0


def test_closed_loop_is_deterministic():
    a = simulate_closed_loop(_scenario()).to_csv()
    b = simulate_closed_loop(_scenario()).to_csv()
    assert a == b
    assert a.splitlines()[0] == "t,y,u,d,e"


def test_quiet_loop_stays_at_rest():
    ts = simulate_closed_loop(_scenario(disturbance=FourierSignal.zero()))
    assert np.max(np.abs(ts.y)) == 0.0
    assert steady_state_residual(ts, 0.5) == 0.0


def test_disturbance_switch_time():
    ts = simulate_closed_loop(_scenario())
    assert np.all(ts.d[ts.t < 0.5 - 1e-9] == 0.0)
    assert ts.d[ts.window(0.5, 0.5)][0] == pytest.approx(2.0)


def test_closed_loop_off_grid_spacing():
    with pytest.raises(StepMismatch):
        simulate_closed_loop(_scenario(qm=FirDelayParameter(0.0505, (0.0, 1.0))))


def test_initial_output_honoured():
    ts = simulate_closed_loop(_scenario(initial_output=1.0, disturbance=FourierSignal.zero()))
    assert ts.y[0] == pytest.approx(1.0)
    assert abs(ts.y[-1]) < abs(ts.y[0])


def test_linear_in_disturbance():
    d = FourierSignal(0.0, ((1.0, 0.2),), 0.25)
    y1 = simulate_closed_loop(_scenario(disturbance=d)).y
    y3 = simulate_closed_loop(_scenario(disturbance=d.scaled(3.0))).y
    np.testing.assert_allclose(y3, 3 * y1, atol=1e-9)
