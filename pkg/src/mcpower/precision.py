"""Admissible-interval sets, described through the midpoint function Delta(M).

A rule decides whether the current interval is precise enough to stop.
Every rule admits zero-length intervals and every subinterval of an admitted
interval. ``delta_at(M)`` is the supremum of admitted lengths at midpoint
``M``; ``attains(M)`` says whether that supremum is itself admitted, which
only fails for rules built from strict inequalities.

``admits`` and ``delta_at`` broadcast over numpy arrays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

# lengths this close to the allowed maximum count as equal to it; interval
# endpoints on a decimal grid only reach the maximum up to rounding
TIE = 1e-12


class PrecisionRule:
    """Base class; subclasses implement :meth:`admits` and :meth:`delta_at`."""

    name = "rule"

    def admits(self, low, high):
        raise NotImplementedError

    def delta_at(self, midpoint):
        raise NotImplementedError

    def attains(self, midpoint):
        return np.ones_like(np.asarray(midpoint, dtype=float), dtype=bool)

    def admits_interval(self, interval) -> bool:
        return bool(self.admits(interval[0], interval[1]))

    def describe(self) -> str:
        return self.name


@dataclass(frozen=True)
class Fixed(PrecisionRule):
    """Any interval of length at most ``delta``."""

    delta: float
    name = "fixed"

    def admits(self, low, high):
        return np.asarray(high) - np.asarray(low) <= self.delta + TIE

    def delta_at(self, midpoint):
        return np.full_like(np.asarray(midpoint, dtype=float), self.delta)

    def describe(self) -> str:
        return f"fixed:{self.delta:g}"


@dataclass(frozen=True)
class SqrtProfile(PrecisionRule):
    """Length allowed grows like ``sqrt(M (1 - M))``, pinned to ``delta_ref`` at ``m_ref``."""

    delta_ref: float = 0.02
    m_ref: float = 0.05
    name = "sqrt"

    def delta_at(self, midpoint):
        m = np.clip(np.asarray(midpoint, dtype=float), 0.0, 1.0)
        return self.delta_ref * np.sqrt(m * (1.0 - m)) / math.sqrt(self.m_ref * (1.0 - self.m_ref))

    def admits(self, low, high):
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        return high - low <= self.delta_at((low + high) / 2.0) + TIE

    def describe(self) -> str:
        return f"sqrt:{self.delta_ref:g},{self.m_ref:g}"


@dataclass(frozen=True)
class Band(PrecisionRule):
    """Length ``inner`` near the edges, ``outer`` for intervals strictly inside ``(left, right)``."""

    outer: float = 0.1
    inner: float = 0.02
    left: float = 0.05
    right: float = 0.95
    name = "band"

    def admits(self, low, high):
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        length = high - low
        inside = (low > self.left) & (high < self.right) & (length <= self.outer + TIE)
        return (length <= self.inner + TIE) | inside

    def _inside_sup(self, m):
        return np.minimum(self.outer, np.minimum(2.0 * (m - self.left), 2.0 * (self.right - m)))

    def delta_at(self, midpoint):
        m = np.asarray(midpoint, dtype=float)
        return np.maximum(self.inner, self._inside_sup(m))

    def attains(self, midpoint):
        m = np.asarray(midpoint, dtype=float)
        edge = np.minimum(2.0 * (m - self.left), 2.0 * (self.right - m))
        # the open edge constraint is the binding one only when it beats both caps
        return ~((edge <= self.outer + TIE) & (edge > self.inner + TIE))

    def describe(self) -> str:
        return f"band:{self.outer:g},{self.inner:g},{self.left:g},{self.right:g}"


@dataclass(frozen=True)
class LeftTail(PrecisionRule):
    """Length ``delta`` unless the whole interval lies strictly right of ``cut``."""

    delta: float = 0.02
    cut: float = 0.05
    name = "lefttail"

    def admits(self, low, high):
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        return (low > self.cut) | (high - low <= self.delta + TIE)

    def delta_at(self, midpoint):
        m = np.asarray(midpoint, dtype=float)
        right_sup = np.minimum(2.0 * (m - self.cut), 2.0 * (1.0 - m))
        return np.maximum(self.delta, right_sup)

    def attains(self, midpoint):
        m = np.asarray(midpoint, dtype=float)
        open_edge = 2.0 * (m - self.cut)
        return ~((open_edge <= 2.0 * (1.0 - m) + TIE) & (open_edge > self.delta + TIE))

    def describe(self) -> str:
        return f"lefttail:{self.delta:g},{self.cut:g}"


@dataclass(frozen=True)
class Custom(PrecisionRule):
    """Piecewise-linear ``Delta(M)`` through the given knots."""

    knots_m: tuple
    knots_delta: tuple
    source: str = ""
    name = "custom"

    def __post_init__(self) -> None:
        m = np.asarray(self.knots_m, dtype=float)
        d = np.asarray(self.knots_delta, dtype=float)
        if m.size < 1 or m.shape != d.shape:
            raise ValueError("custom rule needs matching, nonempty midpoint and length columns")
        if np.any(np.diff(m) <= 0):
            raise ValueError("custom rule midpoints must be strictly increasing")
        if np.any(d < 0):
            raise ValueError("custom rule lengths must be nonnegative")
        if _shrink_violations(self, 101) > 0:
            log.warning("custom rule %s is not closed under taking subintervals on a 101-point grid",
                        self.source or "table")

    def delta_at(self, midpoint):
        return np.interp(np.asarray(midpoint, dtype=float), self.knots_m, self.knots_delta)

    def admits(self, low, high):
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        return high - low <= self.delta_at((low + high) / 2.0) + TIE

    def describe(self) -> str:
        return f"custom:{self.source}"

    @classmethod
    def from_file(cls, path) -> "Custom":
        data = np.loadtxt(path, ndmin=2, comments="#", delimiter=None)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns (midpoint, max length)")
        return cls(tuple(data[:, 0]), tuple(data[:, 1]), source=str(path))


def _shrink_violations(rule: PrecisionRule, n: int) -> int:
    """Count grid intervals admitted while a one-step shrink of them is not."""
    g = np.linspace(0.0, 1.0, n)
    lo, hi = np.meshgrid(g, g, indexing="ij")
    valid = lo < hi
    ok = rule.admits(lo, hi) & valid
    step = g[1] - g[0]
    bad = ok & ~np.asarray(rule.admits(lo + step, hi)) & (lo + step <= hi)
    bad |= ok & ~np.asarray(rule.admits(lo, hi - step)) & (lo <= hi - step)
    return int(bad.sum())


# The four midpoint functions used for the adaptive-length experiments.
DELTA0 = Fixed(0.02)
DELTA1 = SqrtProfile(0.02, 0.05)
DELTA2 = Band(0.1, 0.02, 0.05, 0.95)
DELTA3 = LeftTail(0.02, 0.05)


def scaled_rule(name: str, scale: float = 1.0) -> PrecisionRule:
    """Built-in rule ``delta0``..``delta3`` with every length multiplied by ``scale``."""
    name = name.lower()
    if name in ("delta0", "d0"):
        return Fixed(0.02 * scale)
    if name in ("delta1", "d1"):
        return SqrtProfile(0.02 * scale, 0.05)
    if name in ("delta2", "d2"):
        return Band(0.1 * scale, 0.02 * scale, 0.05, 0.95)
    if name in ("delta3", "d3"):
        return LeftTail(0.02 * scale, 0.05)
    raise ValueError(f"unknown built-in rule {name!r}")


def parse_rule(text: str) -> PrecisionRule:
    """Parse ``fixed:0.02``, ``sqrt[:dref,mref]``, ``band:o,i,l,r``, ``lefttail:d,c``, ``custom:path``."""
    kind, _, args = text.partition(":")
    kind = kind.strip().lower()
    if kind == "custom":
        if not args:
            raise ValueError("custom rule needs a path: custom:<file>")
        return Custom.from_file(Path(args))
    if kind in ("delta0", "delta1", "delta2", "delta3", "d0", "d1", "d2", "d3"):
        return scaled_rule(kind, float(args) if args else 1.0)
    try:
        nums = [float(x) for x in args.split(",")] if args else []
    except ValueError as exc:
        raise ValueError(f"bad rule parameters in {text!r}") from exc
    if kind == "fixed":
        if len(nums) != 1:
            raise ValueError("fixed rule takes one length: fixed:<delta>")
        return Fixed(*nums)
    if kind == "sqrt":
        return SqrtProfile(*nums)
    if kind == "band":
        return Band(*nums)
    if kind == "lefttail":
        return LeftTail(*nums)
    raise ValueError(f"unknown precision rule {text!r}")
