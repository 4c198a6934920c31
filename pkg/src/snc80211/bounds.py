"""Backlog and delay bounds for a saturated-model 802.11 node.

Pipeline: fit a ``(sigma, rho)`` envelope to the impairment log-MGF, turn
it into a weak stochastic service curve ``beta(t) = (1 - r_I) t`` with an
exponential bounding function, then minimise ``f (x) g`` over the free
parameters ``theta1, theta2, r_A, r_I`` subject to ``r_A + r_I = 1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .dcf import (DcfSolution, impairment_envelope, impairment_envelope_limit, impairment_growth,
                  stability_threshold)
from .minplus import AffineCurve, BoundingFunction, convolve_bounding, log_exp_conv
from .traffic import (InfeasibleError, TrafficModel, UpperConstraint, VbcArrivalCurve,
                      poisson_constraint, vbc_from_constraint)

log = logging.getLogger(__name__)

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ConstraintFit:
    """Result of the slope-convergence envelope fit."""

    theta: float
    sigma: float
    rho: float
    t_star: int
    v_m: float
    converged: bool

    @property
    def constraint(self) -> UpperConstraint:
        return UpperConstraint(self.theta, self.sigma, self.rho)


def fit_upper_constraint(M: Union[Sequence[float], Callable[[int], float]], theta: float,
                         epsilon: float = 1e-5, t_max: int = 500) -> ConstraintFit:
    """Fit ``rho t + sigma >= M(t)`` to an increasing log-MGF curve with ``M(0) = 0``.

    The slope ``s(t) = M(t) - M(t-1)`` is followed until two consecutive
    slopes agree to within ``epsilon`` (relative).  The line of that slope
    through ``(t*, M(t*))`` is then lifted by the largest excess of ``M``
    over it on ``[0, t*]``.  ``M`` may be a table or a callable evaluated
    lazily; without convergence by ``t_max`` (or the end of the table) the
    last slope is used and ``converged`` is False.
    """
    if callable(M):
        values = [float(M(0))]
        limit = t_max
    else:
        table = [float(v) for v in M]
        values = table[:1]
        limit = min(t_max, len(table) - 1)
    if values[0] != 0.0:
        raise ValueError("M(0) must be 0")
    if limit < 1:
        raise ValueError("need M on at least t = 0, 1")

    converged = False
    t_star = 1
    for t in range(1, limit + 1):
        values.append(float(M(t)) if callable(M) else table[t])
        t_star = t
        if t >= 2:
            prev, cur = values[t - 1] - values[t - 2], values[t] - values[t - 1]
            if (1 - epsilon) * prev <= cur <= (1 + epsilon) * prev:
                converged = True
                break
    if not converged:
        log.warning("slope did not converge by t=%d (theta=%g)", t_star, theta)

    Ms = np.asarray(values[: t_star + 1])
    rho = max(Ms[t_star] - Ms[t_star - 1], 0.0)
    ts = np.arange(t_star + 1)
    line = Ms[t_star] + rho * (ts - t_star)
    v_m = float(np.max(Ms - line))
    sigma = max(float(Ms[t_star] - rho * t_star + v_m), 0.0)
    assert np.all(rho * ts + sigma >= Ms - 1e-12 * np.maximum(1.0, np.abs(Ms)))
    return ConstraintFit(theta, sigma, rho, t_star, v_m, converged)


@dataclass(frozen=True)
class ImpairmentEnvelope:
    """Certified ``(sigma, rho)`` for the impairment plus the slope-convergence fit.

    The slope-convergence fit only dominates ``M`` up to ``t*``; when its
    slope is below the asymptotic one the line is crossed later.  The
    certified pair uses the exact asymptotic slope and the supremum of
    ``M(t) - rho t`` over the table and its limit, so it holds for all ``t``.
    """

    theta: float
    sigma: float
    rho: float
    fit: ConstraintFit

    @property
    def constraint(self) -> UpperConstraint:
        return UpperConstraint(self.theta, self.sigma, self.rho)


@lru_cache(maxsize=8192)
def impairment_constraint(sol: DcfSolution, theta: float, epsilon: float = 1e-5,
                          t_max: int = 500) -> ImpairmentEnvelope:
    """Envelope of the impairment MGF bound at ``theta`` (cached)."""
    m = impairment_envelope(sol, theta, t_max)
    fit = fit_upper_constraint(m, theta, epsilon, t_max)
    rho = impairment_growth(theta, sol)
    t = np.arange(m.size)
    sigma = max(float(np.max(m - rho * t)), impairment_envelope_limit(theta, sol), 0.0)
    assert np.all(rho * t + sigma >= m - 1e-12 * np.maximum(1.0, m))
    return ImpairmentEnvelope(theta, sigma, rho, fit)


@dataclass(frozen=True)
class WeakServiceCurve:
    beta: AffineCurve
    g: BoundingFunction
    c: float = 1.0

    def __post_init__(self):
        if not 0 < self.beta.rate < self.c:
            raise InfeasibleError(f"service rate {self.beta.rate:.6g} outside (0, {self.c})")


def service_curve(sol: DcfSolution, theta2: float, r_I: float, c: float = 1.0,
                  epsilon: float = 1e-5, t_max: int = 500) -> WeakServiceCurve:
    """Strict server ``c t - I`` with ``I ~vb <g, r_I t>`` gives ``<g, (c - r_I) t>``."""
    if not r_I < c:
        raise InfeasibleError(f"r_I={r_I:.6g} must be below capacity {c}")
    fit = impairment_constraint(sol, theta2, epsilon, t_max)
    impairment = vbc_from_constraint(fit.constraint, r_I)
    return WeakServiceCurve(AffineCurve(c - r_I), impairment.f, c)


@dataclass(frozen=True)
class StabilityInput:
    a_A: float
    a_I: float
    c: float = 1.0

    def __post_init__(self):
        if self.a_A < 0 or self.a_I < 0 or self.c < 0:
            raise ValueError("envelope rates and capacity must be >= 0")
        if self.a_I > self.c:
            raise ValueError("impairment rate cannot exceed capacity")


def stability_input(traffic: TrafficModel, sol: DcfSolution) -> StabilityInput:
    """802.11 case: ``c = 1`` and ``c - a_I`` is the node's success time share."""
    return StabilityInput(traffic.average_rate, 1.0 - stability_threshold(sol), 1.0)


def check_stability(s: StabilityInput) -> bool:
    return s.a_A < s.c - s.a_I


def _slack(alpha: AffineCurve, beta: AffineCurve) -> float:
    """``inf_{s >= 0} [beta(s) - alpha(s)]`` for affine curves vanishing at 0."""
    # rates meant to be equal (r_A + r_I = c) may differ by rounding
    if beta.rate < alpha.rate * (1.0 - 1e-12):
        return -math.inf
    return min(0.0, beta.burst - alpha.burst)


def backlog_tail(arrival: VbcArrivalCurve, service: WeakServiceCurve, x: float) -> tuple:
    """``(P{B > x} bound, feasible)``; an infeasible pair yields the trivial bound 1."""
    slack = _slack(arrival.alpha, service.beta)
    if slack == -math.inf:
        return 1.0, False
    return min(convolve_bounding(arrival.f, service.g, x + slack), 1.0), True


def theorem_delay_tail(arrival: VbcArrivalCurve, service: WeakServiceCurve, x: float) -> float:
    """``f (x) g (inf_s [beta(s) - alpha(s - x)])``, clamped.

    Kept for completeness: for affine curves through the origin the
    infimum is attained at ``s = 0`` and the bound is trivial.
    """
    alpha, beta = arrival.alpha, service.beta
    if beta.rate < alpha.rate:
        return 1.0
    inner = min(0.0, beta.rate * x + beta.burst - alpha.burst)
    return min(convolve_bounding(arrival.f, service.g, inner), 1.0)


@dataclass(frozen=True)
class BoundReport:
    """Per-``x`` minimised backlog tail and the parameters achieving it.

    ``raw`` is the unclamped ``f (x) g``; ``tail`` is clamped to ``[0, 1]``.
    ``log_a`` (arrival coefficient) is NaN for CBR traffic, whose arrival
    bounding function is a unit step at 1.
    """

    kind: str
    lam: float
    x: np.ndarray
    raw: np.ndarray
    tail: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    r_A: np.ndarray
    r_I: np.ndarray
    log_a: np.ndarray
    log_b: np.ndarray
    feasible: bool
    sweeps: int = 0
    expected_backlog: float = math.inf
    notes: tuple = field(default_factory=tuple)

    def evaluate(self, x) -> np.ndarray:
        """Raw bound at arbitrary ``x``: min over the stored parameter sets."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.feasible:
            return np.full(x.shape, math.inf)
        if self.log_b.size == 0:
            return np.zeros(x.shape)
        return np.min(np.exp(_log_candidates(self.kind, self.log_a[:, None], self.theta1[:, None],
                                             self.log_b[:, None], self.theta2[:, None], x[None, :])),
                      axis=0)

    def decay_at(self, k: int) -> float:
        """Exponential decay rate of the ``k``-th stored parameter set."""
        if self.kind == "cbr" or not np.isfinite(self.log_a[k]):
            return float(self.theta2[k])
        t1, t2 = self.theta1[k], self.theta2[k]
        return float(t1 * t2 / (t1 + t2))


def _log_candidates(kind, log_a, theta1, log_b, theta2, x):
    if kind == "cbr":
        # unit step at 1 convolved with b e^{-theta2 x}
        g_x = log_b - theta2 * np.maximum(x, 0.0)
        out = np.logaddexp(0.0, g_x)
        shifted = log_b - theta2 * (x - 1.0)
        return np.where(x >= 1.0, np.minimum(out, shifted), out)
    return log_exp_conv(log_a, theta1, log_b, theta2, x)


def _log_coef(theta, sigma, rho, r):
    """Log of ``e^{theta sigma} / (1 - e^{theta (rho - r)})``; ``inf`` when ``r <= rho``."""
    gap = theta * (r - rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = theta * sigma - np.log(-np.expm1(-gap))
    return np.where(gap > 0, out, np.inf)


class _ImpairmentTable:
    """``theta -> (sigma_I, rho_I)`` with fits cached per solution."""

    def __init__(self, sol, epsilon, t_max):
        self.sol, self.epsilon, self.t_max = sol, epsilon, t_max

    def __call__(self, thetas):
        fits = [impairment_constraint(self.sol, float(t), self.epsilon, self.t_max) for t in thetas]
        return (np.array([f.sigma for f in fits]), np.array([f.rho for f in fits]))


def _golden_min(func, shape, iterations=60):
    """Vectorised golden-section search of ``func(u)`` on the open interval ``(0, 1)``."""
    lo = np.zeros(shape)
    hi = np.ones(shape)
    for _ in range(iterations):
        c = hi - _INVPHI * (hi - lo)
        d = lo + _INVPHI * (hi - lo)
        left = func(c) < func(d)
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
    u = 0.5 * (lo + hi)
    return u, func(u)


def _evaluate_pairs(kind, lam, theta1, theta2, sigma_I, rho_I, x):
    """Best ``log f (x) g`` for each (pair, x); pair arrays have shape ``(P, 1)``."""
    if kind == "cbr":
        r_A = np.full(theta2.shape, lam)
        r_I = 1.0 - r_A
        log_b = _log_coef(theta2, sigma_I, rho_I, r_I)
        log_a = np.full(theta2.shape, np.nan)
        val = _log_candidates("cbr", log_a, theta1, log_b, theta2, x)
        shape = np.broadcast(val, x).shape
        return (val, np.broadcast_to(r_A, shape), np.broadcast_to(log_a, shape),
                np.broadcast_to(log_b, shape))

    rho_A = lam * np.expm1(theta1) / theta1
    lo, hi = rho_A, 1.0 - rho_I
    ok = hi > lo

    def split(u):
        return lo + u * (hi - lo)

    def objective(u):
        r_A = split(u)
        la = _log_coef(theta1, 0.0, rho_A, r_A)
        lb = _log_coef(theta2, sigma_I, rho_I, 1.0 - r_A)
        val = log_exp_conv(la, theta1, lb, theta2, x)
        return np.where(ok & np.isfinite(val), val, np.inf)

    shape = np.broadcast(theta1, theta2, x).shape
    u, val = _golden_min(objective, shape)
    r_A = split(u)
    log_a = _log_coef(theta1, 0.0, rho_A, r_A)
    log_b = _log_coef(theta2, sigma_I, rho_I, 1.0 - r_A)
    return val, r_A, log_a, log_b


def optimize_backlog_tail(arrival: TrafficModel, sol: DcfSolution, x,
                          theta_min: float = 1e-3, theta_max: float = 4.0, theta_points: int = 32,
                          epsilon: float = 1e-5, t_max: int = 500, tol: float = 1e-3,
                          max_sweeps: int = 8, i_max: int = 10_000) -> BoundReport:
    """Minimise the backlog tail bound at every ``x`` of a grid.

    A log-spaced grid of ``theta1 x theta2`` is swept with a golden-section
    search over the ``r_A`` split for every pair; then each ``x`` is refined
    on a 3x3 log-grid around its best pair, halving the log spacing each
    sweep, until no ``x`` improves by more than ``tol`` (relative).  CBR
    arrivals fix ``r_A = lam`` and have no ``theta1``.
    """
    x = np.asarray(x, dtype=float)
    kind, lam = arrival.kind, arrival.lam
    nan = np.full(x.shape, np.nan)

    def report(raw, t1, t2, rA, la, lb, feasible, sweeps=0, notes=()):
        rep = BoundReport(kind, lam, x, raw, np.minimum(raw, 1.0), t1, t2, rA,
                          1.0 - rA if rA.size else rA, la, lb, feasible, sweeps, notes=tuple(notes))
        if feasible:
            object.__setattr__(rep, "expected_backlog", expected_backlog_bound(rep, i_max))
        return rep

    if lam == 0:
        empty = np.empty(0)
        return report(np.zeros(x.shape), empty, empty, empty, empty, empty, True,
                      notes=["no arrivals"])
    if not check_stability(stability_input(arrival, sol)):
        return report(np.full(x.shape, np.inf), nan, nan, nan, nan, nan, False,
                      notes=["unstable: envelope rate exceeds service share"])

    table = _ImpairmentTable(sol, epsilon, t_max)
    grid = np.geomspace(theta_min, theta_max, theta_points)
    ratio = (theta_max / theta_min) ** (1.0 / max(theta_points - 1, 1))

    if kind == "cbr":
        t1 = np.full(grid.size, np.nan)
        t2 = grid
    else:
        t1, t2 = (a.ravel() for a in np.meshgrid(grid, grid, indexing="ij"))
    sig, rho = table(t2)
    val, rA, la, lb = _evaluate_pairs(kind, lam, t1[:, None], t2[:, None], sig[:, None],
                                      rho[:, None], x[None, :])
    best_k = np.argmin(val, axis=0)
    cols = np.arange(x.size)
    best = val[best_k, cols]
    if not np.any(np.isfinite(best)):
        return report(np.full(x.shape, np.inf), nan, nan, nan, nan, nan, False,
                      notes=["no feasible (theta1, theta2, r_A) on the search grid"])
    b_t1, b_t2 = t1[best_k], t2[best_k]
    b_rA, b_la, b_lb = rA[best_k, cols], la[best_k, cols], lb[best_k, cols]

    sweeps = 1
    step = ratio
    while sweeps < max_sweeps:
        step = math.sqrt(step)
        offsets = step ** np.array([-1.0, 0.0, 1.0])
        if kind == "cbr":
            c_t2 = b_t2[:, None] * offsets[None, :]
            c_t1 = np.full(c_t2.shape, np.nan)
        else:
            o1, o2 = (a.ravel() for a in np.meshgrid(offsets, offsets, indexing="ij"))
            c_t1 = b_t1[:, None] * o1[None, :]
            c_t2 = b_t2[:, None] * o2[None, :]
        c_t2 = np.clip(c_t2, theta_min, theta_max)
        if kind != "cbr":
            c_t1 = np.clip(c_t1, theta_min, theta_max)
        uniq, inv = np.unique(c_t2, return_inverse=True)
        s_u, r_u = table(uniq)
        inv = inv.reshape(c_t2.shape)
        v2, rA2, la2, lb2 = _evaluate_pairs(kind, lam, c_t1, c_t2, s_u[inv], r_u[inv], x[:, None])
        k2 = np.argmin(v2, axis=1)
        cand = v2[cols, k2]
        better = cand < best
        # improvement measured on the linear scale
        gain = np.where(better & np.isfinite(best), -np.expm1(cand - best), 0.0)
        best = np.where(better, cand, best)
        b_t1 = np.where(better, c_t1[cols, k2], b_t1)
        b_t2 = np.where(better, c_t2[cols, k2], b_t2)
        b_rA = np.where(better, rA2[cols, k2], b_rA)
        b_la = np.where(better, la2[cols, k2], b_la)
        b_lb = np.where(better, lb2[cols, k2], b_lb)
        sweeps += 1
        if np.max(gain) < tol:
            break

    # every stored set is a valid bound at every x; taking the best one per x
    # also makes the reported tail wide-sense decreasing
    all_sets = _log_candidates(kind, b_la[:, None], b_t1[:, None], b_lb[:, None], b_t2[:, None], x[None, :])
    k = np.argmin(all_sets, axis=0)
    best = all_sets[k, cols]
    return report(np.exp(best), b_t1[k], b_t2[k], b_rA[k], b_la[k], b_lb[k], True, sweeps)


def expected_backlog_bound(report: BoundReport, i_max: int = 10_000,
                           rel_remainder: float = 1e-6) -> float:
    """``sum_{i >= 0} min(f (x) g (i), 1) (i + 1)``, an upper bound on ``E B``.

    The sum runs to ``i_max`` with the stored parameter sets; the rest is
    bounded by the geometric tail of the set chosen at the largest grid
    ``x``.  ``i_max`` doubles until that remainder is below
    ``rel_remainder`` of the partial sum.
    """
    if not report.feasible:
        raise InfeasibleError("no valid tail bound: the expected backlog bound diverges")
    if report.log_b.size == 0:
        return 0.0
    k = int(np.argmax(report.x))
    kappa = report.decay_at(k)
    if not kappa > 0:
        raise InfeasibleError("tail is not exponentially decreasing")
    q = math.exp(-kappa)

    def tail_from(start, stop):
        i = np.arange(start, stop + 1, dtype=float)
        vals = np.exp(_log_candidates(report.kind, report.log_a[k], report.theta1[k],
                                      report.log_b[k], report.theta2[k], i))
        return float(np.sum(np.minimum(vals, 1.0) * (i + 1.0)))

    head_stop = min(i_max, int(math.floor(report.x.max())))
    i = np.arange(0, head_stop + 1, dtype=float)
    total = float(np.sum(np.minimum(report.evaluate(i), 1.0) * (i + 1.0)))
    stop = head_stop
    target = i_max
    while True:
        if target > stop:
            total += tail_from(stop + 1, target)
            stop = target
        h = min(float(np.exp(_log_candidates(report.kind, report.log_a[k], report.theta1[k],
                                             report.log_b[k], report.theta2[k], float(stop)))), 1.0)
        remainder = h * ((stop + 1) * q / (1 - q) + q / (1 - q) ** 2)
        if remainder <= rel_remainder * max(total, 1e-300) or stop >= 10 ** 8:
            return total + remainder
        target = stop * 2


def delay_mean_bound(expected_backlog: float, lam: float) -> float:
    """Little's law: ``E D <= E B / lam`` (calculus slots)."""
    if lam <= 0:
        raise ValueError("arrival rate must be > 0")
    return expected_backlog / lam


def delay_tail_bound(expected_backlog: float, lam: float, x):
    """Markov on the Little bound: ``P{D >= x} <= E B / (lam x)``, capped at 1."""
    if lam <= 0:
        raise ValueError("arrival rate must be > 0")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("delay threshold must be > 0")
    out = np.minimum(expected_backlog / (lam * x), 1.0)
    return out if out.ndim else float(out)
