import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snc80211.dcf import (PhyParams, Scenario, attempt_rate, backoff_means, impairment_envelope,
                          impairment_mgf, impairment_mgf_bruteforce, log_impairment_mgf, slot_length,
                          solve_fixed_point, stability_threshold)

S1 = Scenario(10, 256)


@pytest.fixture(scope="module")
def sol():
    return solve_fixed_point(S1)


def test_slot_timing():
    t = slot_length(S1)
    assert (t.difs, t.data, t.sifs, t.ack) == (50.0, 398.5, 10.0, 304.0)
    assert t.L == pytest.approx(38.125)
    assert t.L_int == 38
    assert t.slot_us == pytest.approx(762.5)
    assert t.in_idle_slots()["data"] == pytest.approx(19.925)


def test_backoff_means_cap_at_cw_max():
    assert backoff_means(PhyParams()) == (16, 32, 64, 128, 256, 512, 512)


def test_fixed_point_scenario1(sol):
    assert sol.tau == pytest.approx(0.0378, abs=5e-5)
    assert sol.gamma == pytest.approx(0.2931, abs=5e-5)
    # both equations hold at the root
    assert sol.gamma == pytest.approx(1 - (1 - sol.tau) ** 9, abs=1e-12)
    assert sol.tau == pytest.approx(attempt_rate(sol.gamma, sol.b), abs=1e-12)
    assert sol.p_t - sol.p_s == sol.p_o
    assert sol.p_nt + sol.p_t == pytest.approx(1.0, abs=1e-15)
    assert stability_threshold(sol) == pytest.approx(0.0792, abs=5e-4)


def test_single_node_never_collides():
    s = solve_fixed_point(Scenario(1, 256))
    assert s.gamma == 0.0
    assert s.tau == pytest.approx(1 / 16)
    assert s.p_o == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60))
def test_more_nodes_collide_more(n):
    a, b = solve_fixed_point(Scenario(n, 256)), solve_fixed_point(Scenario(n + 1, 256))
    assert b.gamma > a.gamma and b.tau < a.tau
    assert 0 < a.tau < 1 and 0 < a.gamma < 1
    assert abs(a.p_t - a.p_s - a.gamma) < 1e-12


def test_invalid_inputs():
    with pytest.raises(ValueError):
        Scenario(0, 256)
    with pytest.raises(ValueError):
        PhyParams(cw_min=64, cw_max=32)
    with pytest.raises(ValueError):
        log_impairment_mgf(-1, 1.0, solve_fixed_point(S1))


@pytest.mark.parametrize("t", [1, 2, 3, 5])
@pytest.mark.parametrize("theta", [0.1, 1.0, 2.5])
def test_mgf_closed_form_matches_triple_sum(sol, t, theta):
    assert impairment_mgf(t, theta, sol) == pytest.approx(impairment_mgf_bruteforce(t, theta, sol), rel=1e-9)


def test_mgf_small_cases(sol):
    assert impairment_mgf(0, 1.0, sol) == 1.0
    # one slot is always charged as lost
    assert impairment_mgf(1, 1.0, sol) == pytest.approx(math.e)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 30), st.floats(0.01, 3.0))
def test_log_mgf_never_below_one_slot(t, theta):
    s = solve_fixed_point(S1)
    m = log_impairment_mgf(t, theta, s) / theta
    # the first slot is always charged, so the envelope never drops below 1
    assert 1.0 - 1e-9 <= m
    assert np.isfinite(m)


def test_envelope_is_increasing_and_cached(sol):
    m = impairment_envelope(sol, 1.0, 60)
    assert m[0] == 0.0 and np.all(np.diff(m) > 0)
    assert impairment_envelope(sol, 1.0, 60) is m
    with pytest.raises(ValueError):
        m[1] = 0.0


def model_impairment_mgf_mc(sol, t, theta, n, rng):
    """Monte Carlo of ``E e^{theta I}`` under the decoupled saturated model.

    Each idle slot independently stays idle (``p_nt``) or starts an
    ``L``-slot transmission owned by the tagged node with probability
    ``p_s / p_t``; ``I`` is ``t`` minus the own transmissions completed in
    a window of ``t L`` idle slots.
    """
    L, W = sol.L_int, t * sol.L_int
    busy = rng.random((n, W)) >= sol.p_nt
    own = rng.random((n, W)) < sol.p_s / sol.p_t
    length = np.where(busy, L, 1)
    end = np.cumsum(length, axis=1)
    start = end - length
    live = start < W  # events that begin inside the window
    j = np.sum(live & busy & own & (end <= W), axis=1)
    return np.exp(theta * (t - j))


@pytest.mark.parametrize("t", [2, 5, 10])
@pytest.mark.parametrize("theta", [0.5, 1.0])
def test_mgf_dominates_monte_carlo(sol, t, theta):
    rng = np.random.default_rng(100 * t + int(10 * theta))
    v = model_impairment_mgf_mc(sol, t, theta, 20000, rng)
    est, se = v.mean(), v.std(ddof=1) / math.sqrt(v.size)
    assert est - 3 * se <= impairment_mgf(t, theta, sol)
