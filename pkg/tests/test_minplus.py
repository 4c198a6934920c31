import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from snc80211.minplus import (AffineCurve, ExpBound, StepBound, TabulatedBound, TabulatedCurve, Trace,
                              ZERO, backlog_of, convolve_bounding, convolve_curve, delay_of, exp_conv,
                              log_exp_conv)

coef = st.floats(1e-3, 1e3)
decay = st.floats(1e-2, 5.0)
slack = st.floats(0.0, 60.0)


def brute_conv(f, g, x, points=20001):
    """Exhaustive grid over y plus a bounded 1-d polish from the best cell."""
    ys = np.linspace(0.0, x, points)
    vals = f(ys) + g(x - ys)
    k = int(np.argmin(vals))
    best = float(vals[k])
    if x > 0:
        lo, hi = ys[max(k - 1, 0)], ys[min(k + 1, points - 1)]
        res = minimize_scalar(lambda y: float(f(y) + g(x - y)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14, "maxiter": 500})
        best = min(best, float(res.fun))
    return best


@settings(max_examples=60, deadline=None)
@given(coef, decay, coef, decay, slack)
def test_exp_conv_matches_exhaustive(a, t1, b, t2, x):
    got = exp_conv(a, t1, b, t2, x)
    want = brute_conv(ExpBound(a, t1), ExpBound(b, t2), x)
    assert got <= want * (1 + 1e-9)
    assert got == pytest.approx(want, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(coef, decay, st.floats(0.0, 5.0), slack)
def test_step_conv_matches_exhaustive(b, t2, h, x):
    f, g = StepBound(h), ExpBound(b, t2)
    # the step is the only kink, so it goes into the grid explicitly
    ys = np.unique(np.concatenate([np.linspace(0, x, 4001), [min(h, x)]]))
    want = float(np.min(f(ys) + g(x - ys)))
    assert convolve_bounding(f, g, x) == pytest.approx(want, rel=1e-9)
    assert convolve_bounding(g, f, x) == pytest.approx(want, rel=1e-9)


def test_tabulated_conv_matches_exhaustive():
    # dyadic breakpoints and slacks keep every y and x - y exact in floating point,
    # so a dyadic grid walks through every cell and every corner
    xs = np.arange(31, dtype=float)
    f = TabulatedBound(tuple(xs), tuple(2.0 * np.exp(-0.4 * xs)))
    g = TabulatedBound(tuple(xs), tuple(np.exp(-0.9 * xs) + 0.01 * (xs < 5)))
    e = ExpBound(1.5, 0.7)
    for x in (0.0, 1.5, 7.0, 12.25, 25.125):
        ys = np.arange(int(x * 1024) + 1) / 1024.0
        for a, b in ((f, g), (f, e), (e, g)):
            want = float(np.min(a(ys) + b(x - ys)))
            assert convolve_bounding(a, b, x) == pytest.approx(want, rel=1e-12)


def test_log_domain_handles_tiny_coefficients():
    got = log_exp_conv(-800.0, 1.0, -805.0, 2.0, 10.0)
    ref = math.log(brute_conv(ExpBound(math.exp(200), 1.0), ExpBound(math.exp(195), 2.0), 10.0)) - 1000.0
    assert got == pytest.approx(ref, rel=1e-9)


def test_zero_function_and_negative_x():
    g = ExpBound(3.0, 0.5)
    assert convolve_bounding(ZERO, g, 4.0) == pytest.approx(g(4.0))
    assert convolve_bounding(g, ZERO, 4.0) == pytest.approx(g(4.0))
    assert convolve_bounding(g, g, -1.0) == pytest.approx(6.0)


def test_raw_values_exceed_one_but_prob_clamps():
    f = ExpBound(5.0, 0.1)
    assert f(0.0) == 5.0
    assert f.prob(0.0) == 1.0
    assert convolve_bounding(f, f, 0.0) == pytest.approx(10.0)


@settings(max_examples=60, deadline=None)
@given(coef, decay, coef, decay, slack, slack)
def test_conv_commutes_and_decreases(a, t1, b, t2, x, dx):
    f, g = ExpBound(a, t1), ExpBound(b, t2)
    v = convolve_bounding(f, g, x)
    assert v == pytest.approx(convolve_bounding(g, f, x), rel=1e-12)
    assert convolve_bounding(f, g, x + dx) <= v * (1 + 1e-12)
    assert v <= min(f(0) + g(x), f(x) + g(0)) * (1 + 1e-12)


def test_bounding_validation():
    with pytest.raises(ValueError):
        ExpBound(-1.0, 1.0)
    with pytest.raises(ValueError):
        ExpBound(1.0, 0.0)
    with pytest.raises(ValueError):
        TabulatedBound((0.0, 1.0), (0.1, 0.5))
    with pytest.raises(ValueError):
        TabulatedCurve((0.0, 2.0, 1.0))


def test_curves():
    a = AffineCurve(0.5, 2.0)
    assert a(0) == 0.0 and a(4) == 4.0
    c = TabulatedCurve((0.0, 1.0, 3.0))
    assert c(-1) == 0.0 and c(2) == 3.0 and c(10) == 3.0


# ---- traces


def test_trace_from_events_counts_strictly_before_boundary():
    tr = Trace.from_event_times([0.0, 1.0, 1.0, 2.5], slot=1.0, horizon=4)
    assert list(tr.cumulative) == [0, 1, 3, 4, 4]
    assert tr.window(1, 3) == 3


def test_trace_rejects_bad_input():
    with pytest.raises(ValueError):
        Trace(np.array([1, 2]))
    with pytest.raises(ValueError):
        Trace(np.array([0, 2, 1]))


@st.composite
def arrival_departure(draw):
    n = draw(st.integers(1, 40))
    inc = draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    a = np.concatenate([[0], np.cumsum(inc)])
    # departures: any monotone path below arrivals
    d = [0]
    for t in range(1, n + 1):
        d.append(draw(st.integers(d[-1], int(a[t]))))
    return Trace(a), Trace(np.array(d))


@settings(max_examples=80, deadline=None)
@given(arrival_departure(), st.data())
def test_delay_matches_linear_scan(traces, data):
    arr, dep = traces
    t = data.draw(st.integers(0, arr.horizon))
    want = None
    for tau in range(arr.horizon - t + 1):
        if arr[t] <= dep[t + tau]:
            want = tau
            break
    assert delay_of(arr, dep, t) == want
    assert backlog_of(arr, dep, t) == arr[t] - dep[t] >= 0


def test_causality_violation_raises():
    with pytest.raises(ValueError):
        backlog_of(Trace(np.array([0, 1])), Trace(np.array([0, 2])), 1)


@settings(max_examples=40, deadline=None)
@given(arrival_departure(), st.floats(0.0, 2.0), st.data())
def test_convolve_curve_exhaustive(traces, rate, data):
    arr, _ = traces
    t = data.draw(st.integers(0, arr.horizon))
    beta = AffineCurve(rate)
    want = min(arr[s] + beta(t - s) for s in range(t + 1))
    assert convolve_curve(arr, beta, t) == pytest.approx(want)
