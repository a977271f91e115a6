"""Clopper-Pearson intervals and the conservative interval over unresolved streams.

All functions broadcast over numpy arrays; scalar inputs give float
endpoints.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np
from scipy.special import betaincinv

log = logging.getLogger(__name__)


class Interval(NamedTuple):
    low: float
    high: float

    @property
    def length(self):
        return self.high - self.low

    @property
    def midpoint(self):
        return (self.low + self.high) / 2.0

    def contains(self, x: float) -> bool:
        return bool(self.low <= x <= self.high)

    def contains_interval(self, other: "Interval") -> bool:
        return bool(self.low <= other.low and other.high <= self.high)


FULL = Interval(0.0, 1.0)


def _maybe_scalar(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _check(r, n, gamma):
    if np.any(r < 0) or np.any(r > n):
        raise ValueError("clopper_pearson needs 0 <= r <= n")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


def _cp_low(r, n, gamma):
    with np.errstate(invalid="ignore", divide="ignore"):
        # guard the shape parameters so masked-out entries stay finite
        low = betaincinv(np.maximum(r, 1.0), np.maximum(n - r + 1.0, 1.0), gamma / 2.0)
    return np.where(r > 0, low, 0.0)


def _cp_high(r, n, gamma):
    with np.errstate(invalid="ignore", divide="ignore"):
        high = betaincinv(r + 1.0, np.maximum(n - r, 1.0), 1.0 - gamma / 2.0)
    return np.where(r < n, high, 1.0)


def clopper_pearson(r, n, gamma: float) -> Interval:
    """Equal-tailed exact binomial interval with coverage at least ``1 - gamma``.

    The endpoints are beta quantiles: ``low`` solves
    ``P[Bin(n, low) >= r] = gamma/2`` and ``high`` solves
    ``P[Bin(n, high) <= r] = gamma/2``. ``n = 0`` gives ``[0, 1]``.
    """
    r = np.asarray(r, dtype=float)
    n = np.asarray(n, dtype=float)
    _check(r, n, gamma)
    return Interval(_maybe_scalar(_cp_low(r, n, gamma)), _maybe_scalar(_cp_high(r, n, gamma)))


def _widen_low(low, epsilon):
    return np.clip((low - epsilon) / (1.0 - epsilon), 0.0, 1.0)


def _widen_high(high, epsilon):
    return np.clip(high / (1.0 - epsilon), 0.0, 1.0)


def interval_infty(r, a, gamma: float, epsilon: float) -> Interval:
    """Interval for fully resolved outcomes, widened for per-stream error ``epsilon``.

    A stream is positive with probability in ``[(1-eps)beta, (1-eps)beta + eps]``,
    so the Clopper-Pearson endpoints are mapped through
    ``low -> (low - eps)/(1 - eps)`` and ``high -> high/(1 - eps)`` and clipped.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    r = np.asarray(r)
    a = np.asarray(a)
    cp = clopper_pearson(r, r + a, gamma)
    return Interval(_maybe_scalar(_widen_low(np.asarray(cp.low), epsilon)),
                    _maybe_scalar(_widen_high(np.asarray(cp.high), epsilon)))


def interval_union(r, a, u, gamma: float, epsilon: float) -> Interval:
    """Union of ``interval_infty`` over every way the ``u`` open streams can resolve.

    Clopper-Pearson endpoints are nondecreasing in the success count at fixed
    trials, so the union is the hull ``[low(r, a+u), high(r+u, a)]``.
    """
    r = np.asarray(r, dtype=float)
    a = np.asarray(a, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(r < 0) or np.any(a < 0) or np.any(u < 0):
        raise ValueError("counts must be nonnegative")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    n = r + a + u
    _check(r, n, gamma)
    low = _widen_low(_cp_low(r, n, gamma), epsilon)
    high = _widen_high(_cp_high(r + u, n, gamma), epsilon)
    return Interval(_maybe_scalar(low), _maybe_scalar(high))


def intervals_disjoint(main: Interval, pilot: Interval):
    return np.logical_or(np.asarray(main.high) < pilot.low, np.asarray(main.low) > pilot.high)


def intersect_with_pilot(main: Interval, pilot: Interval, warn: bool = True) -> Interval:
    """Intersection of two intervals that each hold with their own coverage.

    Disjoint inputs mean one of the two statements failed. The result is then
    the zero-length interval at the pilot endpoint nearest to ``main``, and a
    warning is logged unless ``warn`` is false (planners probe hypothetical
    outcomes where this is expected).
    """
    low = np.maximum(main.low, pilot.low)
    high = np.minimum(main.high, pilot.high)
    empty = intervals_disjoint(main, pilot)
    if np.any(empty):
        if warn:
            log.warning(
                "confidence interval %s does not meet pilot interval %s", main, pilot
            )
        point = np.where(np.asarray(main.high) < pilot.low, pilot.low, pilot.high)
        low = np.where(empty, point, low)
        high = np.where(empty, point, high)
    return Interval(_maybe_scalar(low), _maybe_scalar(high))
