"""Analytical 802.11b DCF model: timing, the tau/gamma fixed point and the
impairment-process MGF bound under saturation.

Time is measured in idle slots; one calculus slot is ``L`` idle slots,
the length of a DIFS + DATA + SIFS + ACK exchange.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import bisect, brentq
from scipy.signal import lfilter
from scipy.special import gammaln, logsumexp

from .traffic import TrafficModel


@dataclass(frozen=True)
class PhyParams:
    """802.11b DSSS parameters.  Rates in bit/s, sizes in bytes, times in microseconds."""

    basic_rate: float = 1e6
    data_rate: float = 11e6
    phy_header: int = 24
    ack_header: int = 14
    mac_header: int = 28
    sifs: float = 10.0
    difs: float = 50.0
    idle_slot: float = 20.0
    cw_min: int = 32
    cw_max: int = 1024
    retry_limit: int = 6
    # frame durations are rounded to this PHY clock (microseconds)
    clock: float = 0.5

    def __post_init__(self):
        for name in ("basic_rate", "data_rate", "phy_header", "ack_header", "mac_header",
                     "sifs", "difs", "idle_slot", "cw_min", "cw_max", "retry_limit", "clock"):
            if not getattr(self, name) > 0:
                raise ValueError(f"phy parameter {name} must be > 0")
        if self.cw_max < self.cw_min:
            raise ValueError("cw_max must be >= cw_min")

    def quantize(self, us: float) -> float:
        return round(us / self.clock) * self.clock

    def cw(self, stage: int) -> int:
        """Contention window after ``stage`` collisions, capped at ``cw_max``."""
        return min(self.cw_min << stage, self.cw_max)


@dataclass(frozen=True)
class Scenario:
    n: int
    payload: int
    phy: PhyParams = field(default_factory=PhyParams)
    traffic: Optional[TrafficModel] = None  # None: saturated

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("scenario needs n >= 1 nodes")
        if self.payload <= 0:
            raise ValueError("payload must be > 0 bytes")

    @property
    def saturated(self) -> bool:
        return self.traffic is None


@dataclass(frozen=True)
class SlotTiming:
    """Durations in microseconds and the calculus-slot length in idle slots."""

    difs: float
    data: float
    sifs: float
    ack: float
    idle_slot: float

    @property
    def L(self) -> float:
        return (self.difs + self.data + self.sifs + self.ack) / self.idle_slot

    @property
    def L_int(self) -> int:
        return int(math.floor(self.L + 0.5))

    @property
    def slot_us(self) -> float:
        """One calculus slot in microseconds."""
        return self.L * self.idle_slot

    def in_idle_slots(self) -> dict:
        return {k: getattr(self, k) / self.idle_slot for k in ("data", "ack", "difs", "sifs")}


def slot_length(scenario: Scenario) -> SlotTiming:
    phy = scenario.phy
    ack = phy.quantize((phy.phy_header + phy.ack_header) * 8 / phy.basic_rate * 1e6)
    data = phy.quantize(phy.phy_header * 8 / phy.basic_rate * 1e6
                        + (phy.mac_header + scenario.payload) * 8 / phy.data_rate * 1e6)
    return SlotTiming(phy.difs, data, phy.sifs, ack, phy.idle_slot)


@dataclass(frozen=True)
class DcfSolution:
    n: int
    tau: float
    gamma: float
    p_nt: float
    p_t: float
    p_s: float
    p_o: float
    L: float
    L_int: int
    b: tuple

    @property
    def stability_threshold(self) -> float:
        return stability_threshold(self)


def backoff_means(phy: PhyParams) -> tuple:
    """Mean backoff (plus the transmission slot) after ``i`` collisions, i = 0..retry_limit."""
    return tuple(phy.cw(i) / 2 for i in range(phy.retry_limit + 1))


def attempt_rate(gamma: float, b) -> float:
    """Attempts per idle slot given a collision probability (Kumar's renewal argument)."""
    num = sum(gamma ** i for i in range(len(b)))
    den = sum(gamma ** i * bi for i, bi in enumerate(b))
    return num / den


def solve_fixed_point(scenario: Scenario) -> DcfSolution:
    """Solve ``tau = G(gamma)``, ``gamma = 1 - (1 - tau)^(n-1)`` by bisection on gamma."""
    b = backoff_means(scenario.phy)
    n = scenario.n
    if n == 1:
        gamma = 0.0
    else:
        h = lambda g: g - (1.0 - (1.0 - attempt_rate(g, b)) ** (n - 1))
        # h(0) < 0 and h(1) > 0, so the root is bracketed
        gamma = bisect(h, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    tau = attempt_rate(gamma, b)
    p_nt = (1.0 - tau) ** n
    p_t = 1.0 - p_nt
    p_s = tau * (1.0 - gamma)
    timing = slot_length(scenario)
    return DcfSolution(n, tau, gamma, p_nt, p_t, p_s, p_t - p_s, timing.L, timing.L_int, b)


def stability_threshold(sol: DcfSolution) -> float:
    """Fraction of time the node spends on its own successful transmissions."""
    return sol.p_s * sol.L / (sol.p_nt + sol.p_t * sol.L)


def log_impairment_mgf(t: int, theta: float, sol: DcfSolution) -> float:
    """Log of the saturated-node upper bound on ``E exp(theta I(s, s+t))``.

    The window of ``t`` calculus slots holds ``tL`` idle slots.  The first
    calculus slot is charged to a complete foreign transmission; the rest
    hold ``i`` complete transmissions, possibly followed by one transmission
    cut off after ``k`` idle slots.  Given ``i`` complete transmissions the
    node owns ``j`` of them with binomial probability, and the impairment is
    ``t - j``.  The sum over ``j`` is done in closed form:
    ``sum_j C(i,j) (ps/pt)^j (po/pt)^(i-j) e^{-theta j} = q^i``.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 0.0
    L = sol.L_int
    log_pnt, log_pt = math.log(sol.p_nt), math.log(sol.p_t)
    log_q = math.log((sol.p_s * math.exp(-theta) + sol.p_o) / sol.p_t)

    def log_terms(i, k):
        idle = (t - i - 1) * L - k
        return (gammaln(idle + i + 1) - gammaln(i + 1) - gammaln(idle + 1)
                + idle * log_pnt + i * (log_pt + log_q))

    complete = log_terms(np.arange(t), 0)
    parts = [complete]
    if t >= 2 and L >= 2:
        i, k = np.meshgrid(np.arange(t - 1), np.arange(1, L), indexing="ij")
        parts.append(log_pt + log_terms(i, k).ravel())
    return theta * t + float(logsumexp(np.concatenate(parts)))


def impairment_mgf(t: int, theta: float, sol: DcfSolution) -> float:
    """Raw MGF bound; overflows to ``inf`` for large ``theta * t``."""
    with np.errstate(over="ignore"):
        return float(np.exp(log_impairment_mgf(t, theta, sol)))


def impairment_mgf_bruteforce(t: int, theta: float, sol: DcfSolution) -> float:
    """Literal triple sum over ``k, i, j`` with exact integer binomials.

    Slow; only meant as an independent check of :func:`impairment_mgf`.
    """
    if t == 0:
        return 1.0
    L = sol.L_int
    ps_, po_ = sol.p_s / sol.p_t, sol.p_o / sol.p_t

    def p_ki(k, i):
        idle = (t - i - 1) * L - k
        return math.comb(idle + i, i) * sol.p_nt ** idle * sol.p_t ** i

    def inner(i, pk):
        return sum(pk * math.comb(i, j) * ps_ ** j * po_ ** (i - j) * math.exp(theta * (t - j))
                   for j in range(i + 1))

    first = sum(inner(i, p_ki(k, i)) for k in range(1, L) for i in range(t - 1))
    second = sum(inner(i, p_ki(0, i)) for i in range(t))
    return sol.p_t * first + second


def _step_weights(theta: float, sol: DcfSolution):
    """Per-idle-slot weight ``u`` and per-transmission weight ``v`` of the MGF sum."""
    q = (sol.p_s * math.exp(-theta) + sol.p_o) / sol.p_t
    return sol.p_nt, sol.p_t * q


def _dominant_log_root(u: float, v: float, L: int) -> float:
    """``s >= 0`` with ``u e^s + v e^{L s} = 1``."""
    h = lambda x: math.log(u * math.exp(x) + v * math.exp(L * x))
    if h(0.0) >= 0.0:
        return 0.0
    return brentq(h, 0.0, -math.log(u), xtol=1e-15, rtol=4 * np.finfo(float).eps)


def impairment_growth(theta: float, sol: DcfSolution) -> float:
    """Exact asymptotic slope of ``M(t) = (1/theta) log`` of the MGF bound.

    Sequences of idle slots (weight ``p_nt``, length 1) and transmissions
    (weight ``p_t q``, length ``L``) grow like ``e^{-s N}`` in their total
    length ``N``, with ``s`` the dominant root above; a window of ``t``
    calculus slots spans ``(t - 1) L`` such units.
    """
    u, v = _step_weights(theta, sol)
    return 1.0 - sol.L_int * _dominant_log_root(u, v, sol.L_int) / theta


def _scaled_walk(theta: float, sol: DcfSolution, t_max: int):
    """``V(N) = W(N) e^{s N}`` for ``N = 0..(t_max - 1) L`` plus ``s``.

    ``W(N) = u W(N-1) + v W(N-L)`` counts weighted sequences of total length
    ``N``; scaling by the dominant root keeps ``V`` bounded.
    """
    L = sol.L_int
    u, v = _step_weights(theta, sol)
    s = _dominant_log_root(u, v, L)
    n = max(t_max - 1, 0) * L + 1
    den = np.zeros(L + 1)
    den[0], den[1] = 1.0, -u * math.exp(s)
    den[L] += -v * math.exp(L * s)
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return lfilter([1.0], den, impulse), s, u, v


@lru_cache(maxsize=4096)
def impairment_envelope(sol: DcfSolution, theta: float, t_max: int) -> np.ndarray:
    """``M(t) = (1/theta) log(bound)`` for ``t = 0..t_max`` (read-only, cached).

    Same values as :func:`log_impairment_mgf`, computed for all ``t`` at once
    through the length recursion.
    """
    L = sol.L_int
    V, s, _, _ = _scaled_walk(theta, sol, t_max)
    out = np.zeros(t_max + 1)
    if t_max >= 1:
        t = np.arange(1, t_max + 1)
        N = (t - 1) * L
        k = np.arange(1, L)
        idx = N[:, None] - k[None, :]
        part = np.where(idx >= 0, V[np.clip(idx, 0, None)] * np.exp(s * k)[None, :], 0.0)
        inner = V[N] + sol.p_t * part.sum(axis=1)
        out[1:] = t + (np.log(inner) - s * N) / theta
    out.setflags(write=False)
    return out


def impairment_envelope_limit(theta: float, sol: DcfSolution) -> float:
    """``lim_t M(t) - rho_inf t`` from the renewal limit of the scaled walk."""
    L = sol.L_int
    u, v = _step_weights(theta, sol)
    s = _dominant_log_root(u, v, L)
    if s == 0.0 and u + v < 1.0:
        raise ValueError("impairment walk is defective; no finite limit")
    v_inf = 1.0 / (u * math.exp(s) + L * v * math.exp(L * s))
    k = np.arange(1, L)
    inner = v_inf * (1.0 + sol.p_t * float(np.sum(np.exp(s * k))))
    # M(t) = t + (log inner - s (t - 1) L) / theta and rho_inf = 1 - s L / theta
    return (math.log(inner) + s * L) / theta
