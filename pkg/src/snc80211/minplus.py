"""Discrete-slot min-plus algebra.

Rate curves are functions of integer slots, bounding functions are
tail functions of a real slack ``x``.  Both are small frozen dataclasses
that evaluate on scalars or numpy arrays.  Traffic is counted in packets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

@dataclass(frozen=True)
class AffineCurve:
    """``rate * t + burst`` for ``t > 0``; ``0`` at ``t <= 0`` when burst is 0."""

    rate: float
    burst: float = 0.0

    def __post_init__(self):
        if self.rate < 0 or self.burst < 0:
            raise ValueError(f"affine curve needs rate, burst >= 0, got {self.rate}, {self.burst}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.where(t > 0, self.rate * t + self.burst, 0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class TabulatedCurve:
    """Rate curve given by its values at ``t = 0, 1, ..., len(values) - 1``."""

    values: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("tabulated curve needs a non-empty 1-d table")
        if np.any(v < 0) or np.any(np.diff(v) < 0):
            raise ValueError("tabulated curve must be nonnegative and wide-sense increasing")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    def __call__(self, t):
        v = np.asarray(self.values)
        idx = np.asarray(t)
        out = np.where(idx < 0, 0.0, v[np.clip(idx, 0, v.size - 1).astype(int)])
        return out if out.ndim else float(out)


RateCurve = Union[AffineCurve, TabulatedCurve]


class _Bounding:
    """Mixin: raw evaluation via ``__call__``, probability reads via ``prob``."""

    def prob(self, x):
        out = np.minimum(self(x), 1.0)
        return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ExpBound(_Bounding):
    """``coefficient * exp(-decay * x)``.  A zero coefficient is the zero function."""

    coefficient: float
    decay: float

    def __post_init__(self):
        if self.coefficient < 0:
            raise ValueError("bounding coefficient must be >= 0")
        if self.decay <= 0:
            raise ValueError("bounding decay must be > 0")

    def __call__(self, x):
        out = self.coefficient * np.exp(-self.decay * np.maximum(np.asarray(x, dtype=float), 0.0))
        return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class StepBound(_Bounding):
    """1 below ``threshold``, 0 from ``threshold`` on."""

    threshold: float

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("step threshold must be >= 0")

    def __call__(self, x):
        out = np.where(np.asarray(x, dtype=float) < self.threshold, 1.0, 0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class TabulatedBound(_Bounding):
    """Right-continuous staircase through ``(xs[i], ps[i])``.

    Between grid points the value of the nearest point to the left is used,
    which over-estimates any decreasing function through the same points.
    """

    xs: tuple
    ps: tuple

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ps = np.asarray(self.ps, dtype=float)
        if xs.shape != ps.shape or xs.ndim != 1 or xs.size == 0:
            raise ValueError("tabulated bound needs matching non-empty 1-d grids")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("tabulated bound grid must be strictly increasing")
        if np.any(ps < 0) or np.any(np.diff(ps) > 0):
            raise ValueError("tabulated bound must be nonnegative and wide-sense decreasing")
        object.__setattr__(self, "xs", tuple(float(v) for v in xs))
        object.__setattr__(self, "ps", tuple(float(v) for v in ps))

    def __call__(self, x):
        xs = np.asarray(self.xs)
        ps = np.asarray(self.ps)
        idx = np.searchsorted(xs, np.asarray(x, dtype=float), side="right") - 1
        out = ps[np.clip(idx, 0, xs.size - 1)]
        return out if out.ndim else float(out)


BoundingFunction = Union[ExpBound, StepBound, TabulatedBound]

ZERO = ExpBound(0.0, 1.0)


def _is_zero(f) -> bool:
    return isinstance(f, ExpBound) and f.coefficient == 0.0


def log_exp_conv(log_a, theta1, log_b, theta2, x):
    """Log of inf over ``y in [0, x]`` of ``a e^{-theta1 y} + b e^{-theta2 (x-y)}``.

    The objective is convex in ``y``, so the stationary point clipped to
    ``[0, x]`` is the minimiser.  Coefficients enter as logs (``-inf`` for
    a zero function); all arguments broadcast.
    """
    log_a, theta1, log_b, theta2, x = (np.asarray(v, dtype=float) for v in (log_a, theta1, log_b, theta2, x))
    with np.errstate(invalid="ignore"):
        y = (log_a + np.log(theta1) - log_b - np.log(theta2) + theta2 * x) / (theta1 + theta2)
    y = np.clip(np.nan_to_num(y, nan=0.0, posinf=np.inf, neginf=-np.inf), 0.0, x)
    out = np.logaddexp(log_a - theta1 * y, log_b - theta2 * (x - y))
    return out if out.ndim else float(out)


def exp_conv(a, theta1, b, theta2, x):
    """:func:`log_exp_conv` on linear-scale coefficients."""
    with np.errstate(divide="ignore"):
        out = np.exp(log_exp_conv(np.log(a), theta1, np.log(b), theta2, x))
    return out if np.ndim(out) else float(out)


def _staircase_conv(f, g, x: float) -> float:
    """Exact infimum when at least one side is a staircase.

    ``f(y) + g(x - y)`` is piecewise constant or monotone between the
    breakpoints of the staircases, so its infimum is reached at a breakpoint
    or approached inside a cell; both are covered by evaluating every
    breakpoint and every cell midpoint.
    """
    cuts = [0.0, x]
    for h, flip in ((f, False), (g, True)):
        if isinstance(h, TabulatedBound):
            pts = np.asarray(h.xs)
            cuts.extend((x - pts) if flip else pts)
    ys = np.unique(np.clip(np.asarray(cuts), 0.0, x))
    ys = np.concatenate([ys, 0.5 * (ys[1:] + ys[:-1])])
    return float(np.min(f(ys) + g(x - ys)))


def convolve_bounding(f: BoundingFunction, g: BoundingFunction, x: float) -> float:
    """Raw ``f (x) g`` at ``x``: inf over ``0 <= y <= x`` of ``f(y) + g(x - y)``.

    Negative ``x`` returns ``f(0) + g(0)``; callers treat that as an
    infeasible (trivial) bound.
    """
    x = float(x)
    if x < 0:
        return float(f(0.0) + g(0.0))
    if _is_zero(g):
        return float(f(x))
    if _is_zero(f):
        return float(g(x))
    if isinstance(f, ExpBound) and isinstance(g, ExpBound):
        return exp_conv(f.coefficient, f.decay, g.coefficient, g.decay, x)
    if isinstance(g, StepBound) and not isinstance(f, StepBound):
        f, g = g, f
    if isinstance(f, StepBound):
        # y < h costs 1 + g(x - y), best at y = 0; y >= h costs g(x - y), best at y = h
        best = 1.0 + float(g(x))
        if x >= f.threshold:
            best = min(best, float(g(x - f.threshold)))
        return best
    return _staircase_conv(f, g, x)


@dataclass(frozen=True)
class Trace:
    """Cumulative process sampled at slots ``0..T`` with ``cumulative[0] == 0``."""

    cumulative: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.cumulative)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("trace needs a non-empty 1-d array")
        if c[0] != 0:
            raise ValueError("trace must start at 0")
        if np.any(np.diff(c) < 0):
            raise ValueError("trace must be wide-sense increasing")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "cumulative", c)

    @classmethod
    def from_event_times(cls, times, slot: float, horizon: int) -> "Trace":
        """Count events strictly before each slot boundary ``t * slot``."""
        edges = np.arange(horizon + 1) * slot
        return cls(np.searchsorted(np.sort(np.asarray(times)), edges, side="left"))

    @property
    def horizon(self) -> int:
        return self.cumulative.size - 1

    def __getitem__(self, t):
        return self.cumulative[t]

    def window(self, s: int, t: int):
        return self.cumulative[t] - self.cumulative[s]


def convolve_curve(arrival: Trace, beta: RateCurve, t: int) -> float:
    """``A (x) beta (t)``: min over integer splits ``0 <= s <= t`` of ``A(s) + beta(t - s)``."""
    if not 0 <= t <= arrival.horizon:
        raise ValueError(f"slot {t} outside trace horizon {arrival.horizon}")
    s = np.arange(t + 1)
    return float(np.min(arrival.cumulative[: t + 1] + beta(t - s)))


def _check_causal(arrival: Trace, departure: Trace):
    if arrival.horizon != departure.horizon:
        raise ValueError("arrival and departure traces have different horizons")
    if np.any(departure.cumulative > arrival.cumulative):
        raise ValueError("departures exceed arrivals: traces are not causal")


def backlog_of(arrival: Trace, departure: Trace, t: int):
    """``A(t) - A*(t)``."""
    _check_causal(arrival, departure)
    return arrival[t] - departure[t]


def delay_of(arrival: Trace, departure: Trace, t: int) -> Optional[int]:
    """Smallest ``tau >= 0`` with ``A(t) <= A*(t + tau)``.

    Returns ``None`` when the departures never catch up within the horizon
    (a right-censored sample).
    """
    _check_causal(arrival, departure)
    target = arrival[t]
    tail = departure.cumulative[t:]
    k = int(np.searchsorted(tail, target, side="left"))
    return k if k < tail.size else None
