"""Joint test on the unresolved streams as a group.

At a checkpoint the unresolved partial sums are compared with ``G_t``, the
law of ``S_t`` under ``p = alpha`` given no boundary contact yet. If enough
sums sit in the lower tail, at least ``r`` of the open streams have
``p <= alpha``; if enough sit in the upper tail, at least ``a`` have
``p > alpha``. Each claim is tested against a binomial bound at level
``xi_t / 2``. When both claims hold, ``r`` positives and ``a`` negatives are
credited and the interval is recomputed.

The upper-tail count uses ``P(S_t >= x | alive) <= eta`` rather than
``G_t(x) >= 1 - eta``. For a discrete ``G_t`` the latter can hold with
probability far above ``eta`` (at ``t = 1`` it holds for every sum), while
the survival form keeps the binomial bound valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import binom

from .interval import FULL, Interval, interval_union, intersect_with_pilot
from .spending import JointSpendingSchedule


class Decision(NamedTuple):
    both_reject: bool
    reject_plus: bool
    reject_minus: bool
    p_plus: float
    p_minus: float


@dataclass
class CheckpointRecord:
    t: int
    unresolved: int
    r: int | None
    a: int | None
    t_plus: int | None
    t_minus: int | None
    xi: float
    decision: str             # both_reject | fail | infeasible
    low: float | None = None
    high: float | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class JointTestState:
    eta: float
    schedule: JointSpendingSchedule
    prefer: str = "pilot"
    history: list[CheckpointRecord] = field(default_factory=list)

    def next_checkpoint(self, t: int) -> int:
        return self.schedule.next_checkpoint(t)

    @property
    def spent(self) -> float:
        """Total test level used by the checkpoints performed so far."""
        return math.fsum(rec.xi for rec in self.history if rec.decision != "infeasible")


def _prefer_positive(prefer: str, pilot: Interval) -> bool:
    if prefer == "positive":
        return True
    if prefer == "negative":
        return False
    if prefer == "pilot":
        return (pilot.low + pilot.high) / 2.0 >= 0.5
    raise ValueError(f"prefer must be pilot, positive or negative, got {prefer!r}")


def choose_ra(R: int, A: int, u: int, rule, gamma: float, epsilon: float,
              pilot: Interval = FULL, prefer: str = "pilot") -> tuple[int, int] | None:
    """Fewest extra resolutions ``(r, a)`` after which the interval would be admitted.

    Candidates come in order of ``m = r + a``: even ``m`` splits evenly,
    odd ``m`` gives the extra one to the preferred side. Returns ``None``
    when no split of at most ``u`` resolutions is enough.
    """
    if u < 1:
        raise ValueError("choose_ra needs at least one unresolved stream")
    m = np.arange(u + 1)
    half = m // 2
    odd = m % 2
    if _prefer_positive(prefer, pilot):
        r, a = half + odd, half
    else:
        r, a = half, half + odd
    cand = intersect_with_pilot(interval_union(R + r, A + a, u - m, gamma, epsilon), pilot, warn=False)
    ok = np.flatnonzero(rule.admits(cand.low, cand.high))
    if ok.size == 0:
        return None
    k = ok[0]
    return int(r[k]), int(a[k])


def test_statistics(sums, table, t: int, r: int, a: int, eta: float) -> tuple[int, int]:
    """Counts ``(T_plus, T_minus)`` over the ascending partial sums ``sums``.

    ``T_plus`` counts positions ``r..n`` (1-based) whose ``G_t`` value is at
    most ``eta``; ``T_minus`` counts positions ``1..n-a+1`` whose upper-tail
    probability is at most ``eta``. A count whose hypothesis is empty
    (``r = 0`` or ``a = 0``) is returned as 0 and rejected by :func:`decide`.
    """
    sums = np.asarray(sums, dtype=np.int64)
    n = sums.size
    if np.any(np.diff(sums) < 0):
        raise ValueError("sums must be sorted ascending")
    if r < 0 or a < 0 or r > n or a > n:
        raise ValueError(f"need 0 <= r, a <= n (n={n}, r={r}, a={a})")
    t_plus = 0
    if r >= 1:
        g = np.asarray(table.conditional_cdf(t, sums[r - 1:]))
        t_plus = int(np.count_nonzero(g <= eta))
    t_minus = 0
    if a >= 1:
        sf = np.asarray(table.conditional_sf(t, sums[: n - a + 1]))
        t_minus = int(np.count_nonzero(sf <= eta))
    return t_plus, t_minus


def binomial_tail(n: int, eta: float, k: int) -> float:
    """``P[Bin(n, eta) >= k]``."""
    if k <= 0:
        return 1.0
    return float(binom.sf(k - 1, n, eta))


def decide(t_plus: int, t_minus: int, n: int, r: int, a: int, eta: float, xi: float) -> Decision:
    """Reject each hypothesis when its binomial tail is at most ``xi / 2``."""
    if r == 0:
        rp, pp = True, 0.0
    else:
        pp = binomial_tail(n - r + 1, eta, t_plus)
        rp = pp <= xi / 2.0
    if a == 0:
        rm, pm = True, 0.0
    else:
        pm = binomial_tail(n - a + 1, eta, t_minus)
        rm = pm <= xi / 2.0
    return Decision(rp and rm, rp, rm, pp, pm)


def checkpoint(state: JointTestState, t: int, R: int, A: int, open_sums, table, rule,
               gamma: float, epsilon: float, pilot: Interval = FULL):
    """Run the test at checkpoint ``t``; returns ``(record, adjusted interval or None)``."""
    u = int(np.size(open_sums))
    xi = state.schedule.xi_at(t)
    ra = choose_ra(R, A, u, rule, gamma, epsilon, pilot, state.prefer)
    if ra is None:
        rec = CheckpointRecord(t, u, None, None, None, None, xi, "infeasible")
        state.history.append(rec)
        return rec, None
    r, a = ra
    sums = np.sort(np.asarray(open_sums, dtype=np.int64))
    t_plus, t_minus = test_statistics(sums, table, t, r, a, state.eta)
    dec = decide(t_plus, t_minus, u, r, a, state.eta, xi)
    adjusted = None
    if dec.both_reject:
        adjusted = intersect_with_pilot(interval_union(R + r, A + a, u - r - a, gamma, epsilon), pilot)
    rec = CheckpointRecord(t, u, r, a, t_plus, t_minus, xi, "both_reject" if dec.both_reject else "fail",
                           None if adjusted is None else adjusted.low,
                           None if adjusted is None else adjusted.high)
    state.history.append(rec)
    return rec, adjusted
