"""Arrival characterisations: MGF upper constraints and v.b.c arrival curves."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .minplus import AffineCurve, BoundingFunction, ExpBound, StepBound


class InfeasibleError(ValueError):
    """A requested curve or bound does not exist for the given parameters."""


@dataclass(frozen=True)
class UpperConstraint:
    """``(1/theta) log E exp(theta A(s,t)) <= rho (t - s) + sigma``."""

    theta: float
    sigma: float
    rho: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.sigma < 0 or self.rho < 0:
            raise ValueError("sigma and rho must be >= 0")

    def envelope(self, t):
        """The certified log-MGF envelope ``rho t + sigma``."""
        return self.rho * np.asarray(t, dtype=float) + self.sigma


@dataclass(frozen=True)
class VbcArrivalCurve:
    alpha: AffineCurve
    f: BoundingFunction

    @property
    def rate(self) -> float:
        return self.alpha.rate


@dataclass(frozen=True)
class TrafficModel:
    """Per-node offered load in packets per calculus slot.

    ``lam == 0`` is accepted as the degenerate no-arrival process.
    """

    kind: Literal["poisson", "cbr"]
    lam: float

    def __post_init__(self):
        if self.kind not in ("poisson", "cbr"):
            raise ValueError(f"unknown traffic kind {self.kind!r}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"traffic rate must be finite and >= 0, got {self.lam}")

    @property
    def average_rate(self) -> float:
        """Envelope average rate; equals ``lam`` for both classes."""
        return self.lam


def poisson_constraint(lam: float, theta: float) -> UpperConstraint:
    """Poisson(lam) per slot is ``(0, lam (e^theta - 1) / theta)``-upper constrained."""
    if lam <= 0 or theta <= 0:
        raise ValueError("poisson constraint needs lam > 0 and theta > 0")
    return UpperConstraint(theta, 0.0, lam * math.expm1(theta) / theta)


def cbr_arrival_curve(lam: float) -> VbcArrivalCurve:
    """Periodic single-packet arrivals never exceed ``lam t`` by a whole packet."""
    if lam <= 0:
        raise ValueError("cbr rate must be > 0")
    return VbcArrivalCurve(AffineCurve(lam), StepBound(1.0))


def vbc_from_constraint(c: UpperConstraint, r: float) -> VbcArrivalCurve:
    """v.b.c arrival curve ``<f, r t>`` of a ``(sigma, rho)``-upper constrained process."""
    if not r > c.rho:
        raise InfeasibleError(
            f"rate r={r:.6g} must exceed the envelope rate rho={c.rho:.6g} at theta={c.theta:.6g}"
        )
    coefficient = math.exp(c.theta * c.sigma) / -math.expm1(c.theta * (c.rho - r))
    return VbcArrivalCurve(AffineCurve(r), ExpBound(coefficient, c.theta))


def poisson_counts(rng: np.random.Generator, lam: float, slots: int) -> np.ndarray:
    """Packets arriving at the start of each calculus slot."""
    return rng.poisson(lam, size=slots)


def cbr_times(lam: float, horizon: float, phase: float = 0.0) -> np.ndarray:
    """Arrival instants (in calculus slots) of one packet every ``1/lam`` slots."""
    if lam <= 0:
        return np.empty(0)
    k = np.arange(int(math.floor((horizon - phase) * lam)) + 1)
    times = phase + k / lam
    return times[times < horizon]


def vbc_violation(counts_cumulative: np.ndarray, rate: float) -> np.ndarray:
    """``sup_{0<=s<=t} [A(s,t) - rate (t-s)]`` for every ``t`` of one sample path.

    Uses the Lindley-type recursion ``W(t) = max(0, W(t-1) + a(t) - rate)``
    which equals the supremum over window starts.  A 2-d input is treated
    as one path per row.
    """
    inc = np.diff(np.asarray(counts_cumulative, dtype=float), axis=-1)
    w = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
    for t in range(1, w.shape[-1]):
        w[..., t] = np.maximum(0.0, w[..., t - 1] + inc[..., t - 1] - rate)
    return w
