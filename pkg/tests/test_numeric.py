import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finform.errors import DimensionMismatch, NonFiniteState, UnknownSignal
from finform.numeric import OdeSystem, SimTrace, running_l2, simulate, step_rk4


def decay():
    return OdeSystem(1, lambda t, x: -x)


def test_step_rk4_zero_field_is_identity():
    sys0 = OdeSystem(1, lambda t, x: np.zeros(1))
    assert step_rk4(sys0, 0.0, np.array([5.0]), 0.1)[0] == 5.0


def test_step_rk4_constant_field_exact():
    sys1 = OdeSystem(1, lambda t, x: np.ones(1))
    assert step_rk4(sys1, 0.0, np.array([0.0]), 0.5)[0] == 0.5


def test_step_rk4_matches_exponential_series():
    # one step of dx=-x from 1 equals the Taylor series of exp(-h) through h^4
    got = step_rk4(decay(), 0.0, np.array([1.0]), 0.1)[0]
    series = 1.0 - 0.1 + 0.1 ** 2 / 2 - 0.1 ** 3 / 6 + 0.1 ** 4 / 24
    assert got == pytest.approx(series, abs=1e-15)
    assert abs(got - math.exp(-0.1)) < 1e-7


def test_step_rk4_order_factor():
    # halving h shrinks the one-step-per-unit-time error by about 2^4
    def end_error(h):
        x = np.array([1.0])
        n = int(round(1.0 / h))
        for i in range(n):
            x = step_rk4(decay(), i * h, x, h)
        return abs(x[0] - math.exp(-1.0))

    # steps large enough that truncation dominates double-precision rounding
    e1, e2, e3 = end_error(2e-2), end_error(1e-2), end_error(5e-3)
    assert 14.0 < e1 / e2 < 18.0
    assert 14.0 < e2 / e3 < 18.0


def test_simulate_exponential_endpoint():
    tr = simulate(decay(), [1.0], 1.0, 1e-3)
    assert abs(tr.states[-1, 0] - math.exp(-1.0)) < 1e-8
    assert tr.times[0] == 0.0 and tr.times[-1] == pytest.approx(1.0)


def test_simulate_two_point_trace():
    tr = simulate(decay(), [1.0], 1e-3, 1e-3)
    assert len(tr) == 2


def test_probe_accumulator_constant_integrand():
    sys0 = OdeSystem(1, lambda t, x: np.zeros(1))
    tr = simulate(sys0, [2.0], 3.0, 1e-2, probes=[("p", lambda t, x: x[0] ** 2)])
    assert tr.accumulator("p")[-1] == pytest.approx(4.0 * 3.0, abs=1e-9)
    assert len(tr.output("p")) == len(tr)


def test_running_l2_constant_and_zero():
    times = np.linspace(0.0, 2.0, 201)
    tr = SimTrace(times, np.zeros((201, 1)),
                  {"one": np.ones(201), "zero": np.zeros(201)})
    assert running_l2(tr, "one") == pytest.approx(2.0)
    assert running_l2(tr, "zero") == 0.0


def test_running_l2_exponential():
    tr = simulate(decay(), [1.0], 10.0, 1e-3, probes=[("s", lambda t, x: x[0])])
    want = (1.0 - math.exp(-20.0)) / 2.0
    assert running_l2(tr, "s") == pytest.approx(want, abs=1e-4)


def test_unknown_signal():
    tr = simulate(decay(), [1.0], 0.01, 1e-3)
    with pytest.raises(UnknownSignal):
        running_l2(tr, "nope")
    with pytest.raises(UnknownSignal):
        tr.accumulator("nope")


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        simulate(decay(), [1.0, 2.0], 1.0, 1e-3)
    bad = OdeSystem(2, lambda t, x: np.zeros(3))
    with pytest.raises(DimensionMismatch):
        step_rk4(bad, 0.0, np.zeros(2), 0.1)


def test_blowup_attaches_partial_trace():
    # dx = x^2 from 1 escapes at t=1; the partial trace must survive
    sq = OdeSystem(1, lambda t, x: x * x)
    with pytest.raises(NonFiniteState) as exc_info, \
            np.errstate(over="ignore"):
        simulate(sq, [1.0], 2.0, 1e-3, probes=[("x", lambda t, x: x[0])])
    tr = exc_info.value.trace
    assert tr is not None and len(tr) > 100
    assert np.all(np.diff(tr.times) > 0)
    assert len(tr.output("x")) == len(tr)


def test_simulate_bitwise_deterministic():
    def rhs(t, x):
        return np.array([math.sin(x[1]) - 0.3 * x[0], x[0] * x[0] - x[1]])

    sys2 = OdeSystem(2, rhs)
    a = simulate(sys2, [0.3, -0.2], 2.0, 1e-3, probes=[("p", lambda t, x: x[0] * x[1])])
    b = simulate(sys2, [0.3, -0.2], 2.0, 1e-3, probes=[("p", lambda t, x: x[0] * x[1])])
    assert a.states.tobytes() == b.states.tobytes()
    assert a.output("p").tobytes() == b.output("p").tobytes()
    assert a.accumulator("p").tobytes() == b.accumulator("p").tobytes()


def test_times_strictly_increasing():
    tr = simulate(decay(), [1.0], 0.5, 1e-3)
    assert np.all(np.diff(tr.times) > 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=2, max_size=4),
       st.floats(0.1, 2.0))
def test_squared_probe_accumulator_monotone(coeffs, t_end):
    # any squared signal has a non-decreasing running integral
    c = np.asarray(coeffs)

    def rhs(t, x):
        return np.array([np.polyval(c, math.sin(t))])

    sysp = OdeSystem(1, rhs)
    tr = simulate(sysp, [0.0], float(t_end), 1e-2,
                  probes=[("sq", lambda t, x: x[0] ** 2)])
    assert np.all(np.diff(tr.accumulator("sq")) >= -1e-15)
