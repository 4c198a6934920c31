import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp
from scipy.stats import poisson

from snc80211.minplus import StepBound
from snc80211.traffic import (InfeasibleError, TrafficModel, UpperConstraint, cbr_arrival_curve, cbr_times,
                              poisson_constraint, poisson_counts, vbc_from_constraint, vbc_violation)


@pytest.mark.parametrize("lam,theta,t", [(0.04, 1.0, 1), (0.07, 0.5, 10), (0.3, 2.0, 25)])
def test_poisson_constraint_equals_mgf_series(lam, theta, t):
    # E e^{theta A(t)} summed term by term over the Poisson(lam t) pmf
    k = np.arange(400)
    log_mgf = float(logsumexp(theta * k + poisson.logpmf(k, lam * t)))
    c = poisson_constraint(lam, theta)
    assert c.sigma == 0.0
    assert log_mgf / theta == pytest.approx(c.rho * t, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 10.0), st.floats(0.0, 3.0), st.floats(0.01, 1.0), st.floats(1e-3, 1.0))
def test_vbc_coefficient_is_geometric_sum(theta, sigma, rho, gap):
    # sum over window lengths k >= 0 of e^{theta sigma} e^{-theta (r - rho) k}
    r = rho + gap
    vbc = vbc_from_constraint(UpperConstraint(theta, sigma, rho), r)
    k = np.arange(0, int(60 / (theta * gap)) + 10)
    series = math.exp(theta * sigma) * float(np.sum(np.exp(-theta * gap * k)))
    assert vbc.f.coefficient == pytest.approx(series, rel=1e-9)
    assert vbc.rate == r and vbc.f.decay == theta


def test_vbc_needs_rate_above_envelope():
    c = poisson_constraint(0.04, 1.0)
    with pytest.raises(InfeasibleError):
        vbc_from_constraint(c, c.rho)
    with pytest.raises(InfeasibleError):
        vbc_from_constraint(c, c.rho / 2)


def test_cbr_curve_and_times():
    v = cbr_arrival_curve(0.04)
    assert isinstance(v.f, StepBound) and v.f.threshold == 1.0 and v.rate == 0.04
    times = cbr_times(0.04, 100.0)
    assert np.allclose(np.diff(times), 25.0) and times[0] == 0.0 and times[-1] < 100.0
    assert cbr_times(0.0, 10.0).size == 0


def test_traffic_model_validation():
    assert TrafficModel("poisson", 0.0).average_rate == 0.0
    with pytest.raises(ValueError):
        TrafficModel("bursty", 0.1)
    with pytest.raises(ValueError):
        TrafficModel("cbr", -0.1)
    with pytest.raises(ValueError):
        TrafficModel("cbr", math.inf)


def test_violation_recursion_matches_sup():
    rng = np.random.default_rng(3)
    cum = np.concatenate([[0], np.cumsum(rng.poisson(0.5, 60))])
    w = vbc_violation(cum, 0.6)
    for t in range(cum.size):
        want = max(cum[t] - cum[s] - 0.6 * (t - s) for s in range(t + 1))
        assert w[t] == pytest.approx(want)


def _binomial_upper(p_hat, n, z=3.0):
    # one-sided check: empirical frequency may exceed the bound only by 3 sigma
    return p_hat - z * math.sqrt(max(p_hat * (1 - p_hat), 1.0 / n) / n)


@pytest.mark.parametrize("lam", [0.04, 0.07])
def test_poisson_paths_respect_bounding_function(lam):
    rng = np.random.default_rng(11)
    n_paths, slots = 1000, 400
    cum = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(poisson_counts(rng, lam, (n_paths, slots)), axis=1)],
                         axis=1)
    for theta in (0.5, 1.0, 2.0):
        c = poisson_constraint(lam, theta)
        r = 1.5 * c.rho
        vbc = vbc_from_constraint(c, r)
        sup = vbc_violation(cum, r)[:, -1]
        for x in (0.0, 1.0, 2.0, 3.0, 5.0):
            p_hat = float(np.mean(sup > x))
            assert _binomial_upper(p_hat, n_paths) <= vbc.f.prob(x)


def test_cbr_paths_never_violate_by_a_packet():
    rng = np.random.default_rng(12)
    for lam in (0.04, 0.07):
        v = cbr_arrival_curve(lam)
        sups = []
        for _ in range(1000):
            times = cbr_times(lam, 400.0, phase=rng.random() / lam)
            cum = np.searchsorted(times, np.arange(401), side="left")
            sups.append(vbc_violation(cum, lam)[-1])
        sups = np.array(sups)
        for x in (0.0, 0.5, 1.0, 2.0):
            assert np.mean(sups > x) <= v.f.prob(x)
