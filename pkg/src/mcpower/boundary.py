"""Stopping boundaries for Bernoulli streams and the alive-state distribution.

The boundaries are built step by step under ``p = alpha``: the surviving
mass is pushed one Bernoulli step forward, each boundary is placed at the
most extreme level whose tail (plus everything already absorbed on that
side) still fits in the spending budget ``eps_t``, and the tails beyond the
boundaries are absorbed.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .spending import SpendingSchedule, epsilon_at

log = logging.getLogger(__name__)


@njit(cache=True)
def _extend_kernel(buf, base, lo, hi, su, cu, sl, cl, t0, t1, alpha, eps, half,
                   upper, lower, spent_u, spent_l):
    q = 1.0 - alpha
    for t in range(t0 + 1, t1 + 1):
        if lo > hi:
            # every path absorbed; signal to the caller
            return buf, base, lo, hi, su, cu, sl, cl, t
        if hi + 1 - base >= buf.size:
            width = hi - lo + 1
            cap = max(buf.size, 4 * width + 64)
            nb = np.zeros(cap)
            nb[:width] = buf[lo - base:hi - base + 1]
            buf = nb
            base = lo
        # one Bernoulli(alpha) step, in place, top down
        buf[hi + 1 - base] = buf[hi - base] * alpha
        for s in range(hi, lo, -1):
            buf[s - base] = buf[s - base] * q + buf[s - 1 - base] * alpha
        buf[lo - base] = buf[lo - base] * q
        hi += 1

        e = eps * t / (half + t)

        # upper: smallest j whose tail sum still fits the budget
        acc = 0.0
        j = hi + 1
        while j - 1 >= lo and acc + buf[j - 1 - base] + su <= e:
            acc += buf[j - 1 - base]
            j -= 1
        u_t = j
        cut_u = acc

        # lower: largest j whose lower tail still fits the budget
        acc = 0.0
        j = lo - 1
        while j + 1 < u_t and acc + buf[j + 1 - base] + sl <= e:
            acc += buf[j + 1 - base]
            j += 1
        l_t = j
        cut_l = acc

        # compensated accumulation of absorbed mass
        y = cut_u - cu
        s_new = su + y
        cu = (s_new - su) - y
        su = s_new
        y = cut_l - cl
        s_new = sl + y
        cl = (s_new - sl) - y
        sl = s_new

        for s in range(u_t, hi + 1):
            buf[s - base] = 0.0
        for s in range(lo, l_t + 1):
            buf[s - base] = 0.0
        lo = l_t + 1
        hi = u_t - 1

        upper[t] = u_t
        lower[t] = l_t
        spent_u[t] = su
        spent_l[t] = sl
    return buf, base, lo, hi, su, cu, sl, cl, t1 + 1


@dataclass
class _AliveSnapshot:
    offset: int
    probs: np.ndarray
    spent_upper: tuple[float, float]
    spent_lower: tuple[float, float]


class BoundaryTable:
    """Boundaries ``U_t``, ``L_t`` for one ``(alpha, schedule)`` pair.

    Grows lazily through :meth:`extend_to`. Readers may use any prefix that
    has already been built; extension is serialized by an internal lock.

    ``upper[t]`` and ``lower[t]`` are indexed by the step ``t``; index 0
    holds the conventional ``U_0 = 1``, ``L_0 = -1``. The alive distribution
    ``f_t(s) = P_alpha(S_t = s, tau > t)`` is kept for the latest step and
    for any step registered with :meth:`retain`.
    """

    def __init__(self, alpha: float, sched: SpendingSchedule):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        self.alpha = float(alpha)
        self.sched = sched
        self._lock = threading.Lock()
        cap = 1024
        self._upper = np.zeros(cap, dtype=np.int64)
        self._lower = np.zeros(cap, dtype=np.int64)
        self._spent_u = np.zeros(cap)
        self._spent_l = np.zeros(cap)
        self._upper[0] = 1
        self._lower[0] = -1
        self.extended_to = 0
        # live state of the recursion
        self._buf = np.zeros(64)
        self._buf[0] = 1.0
        self._base = 0
        self._lo = 0
        self._hi = 0
        self._su = (0.0, 0.0)
        self._sl = (0.0, 0.0)
        self._retain: set[int] = {0}
        self._snapshots: dict[int, _AliveSnapshot] = {0: self._snapshot()}
        self._jump = None

    # -- construction -----------------------------------------------------

    def _snapshot(self) -> _AliveSnapshot:
        probs = self._buf[self._lo - self._base:self._hi - self._base + 1].copy()
        return _AliveSnapshot(self._lo, probs, self._su, self._sl)

    def _grow(self, t_target: int) -> None:
        cap = self._upper.size
        if t_target < cap:
            return
        new_cap = max(2 * cap, t_target + 1)
        for name in ("_upper", "_lower", "_spent_u", "_spent_l"):
            old = getattr(self, name)
            arr = np.zeros(new_cap, dtype=old.dtype)
            arr[:old.size] = old
            setattr(self, name, arr)

    def _run(self, t_target: int) -> None:
        buf, base, lo, hi, su, cu, sl, cl, stopped = _extend_kernel(
            self._buf, self._base, self._lo, self._hi,
            self._su[0], self._su[1], self._sl[0], self._sl[1],
            self.extended_to, t_target, self.alpha, self.sched.epsilon_total,
            float(self.sched.half_life),
            self._upper, self._lower, self._spent_u, self._spent_l,
        )
        if stopped <= t_target:
            raise RuntimeError(
                f"all mass absorbed at step {stopped}; boundary recursion is inconsistent"
            )
        self._buf, self._base, self._lo, self._hi = buf, base, lo, hi
        self._su = (su, cu)
        self._sl = (sl, cl)
        self.extended_to = t_target

    def retain(self, steps) -> None:
        """Keep the alive distribution at ``steps`` when extension passes them."""
        with self._lock:
            self._retain.update(int(s) for s in steps)

    def extend_to(self, t_target: int) -> "BoundaryTable":
        """Build boundaries through step ``t_target`` (no-op if already there)."""
        if t_target <= self.extended_to:
            return self
        with self._lock:
            if t_target <= self.extended_to:
                return self
            self._grow(t_target)
            stops = sorted(s for s in self._retain if self.extended_to < s < t_target)
            for s in stops + [t_target]:
                self._run(s)
                if s in self._retain or s == t_target:
                    self._snapshots[s] = self._snapshot()
            # only retained steps and the latest one stay in memory
            for s in list(self._snapshots):
                if s not in self._retain and s != self.extended_to:
                    del self._snapshots[s]
        return self

    # -- accessors ----------------------------------------------------------

    @property
    def upper(self) -> np.ndarray:
        """``U_t`` for ``t = 0 .. extended_to`` (read-only view)."""
        v = self._upper[: self.extended_to + 1]
        v.flags.writeable = False
        return v

    @property
    def lower(self) -> np.ndarray:
        v = self._lower[: self.extended_to + 1]
        v.flags.writeable = False
        return v

    @property
    def spent_upper(self) -> np.ndarray:
        """``P_alpha(tau <= t, S_tau >= U_tau)`` for each ``t``."""
        return self._spent_u[: self.extended_to + 1]

    @property
    def spent_lower(self) -> np.ndarray:
        return self._spent_l[: self.extended_to + 1]

    def epsilon(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.sched.epsilon_total * t / (self.sched.half_life + t)

    def alive_dist(self, t: int) -> tuple[int, np.ndarray]:
        """Return ``(offset, probs)`` with ``probs[k] = P_alpha(S_t = offset + k, tau > t)``."""
        if t > self.extended_to:
            self.extend_to(t)
        snap = self._snapshots.get(t)
        if snap is None:
            snap = self._recompute(t)
        return snap.offset, snap.probs

    def _recompute(self, t: int) -> _AliveSnapshot:
        # rebuild from the closest retained step at or before t
        start = max(s for s in self._snapshots if s <= t)
        snap = self._snapshots[start]
        log.debug("recomputing alive distribution at step %d from step %d", t, start)
        upper = np.zeros(t + 1, dtype=np.int64)
        lower = np.zeros(t + 1, dtype=np.int64)
        su_arr = np.zeros(t + 1)
        sl_arr = np.zeros(t + 1)
        buf = np.zeros(max(64, 4 * snap.probs.size + 64))
        buf[: snap.probs.size] = snap.probs
        out = _extend_kernel(
            buf, snap.offset, snap.offset, snap.offset + snap.probs.size - 1,
            snap.spent_upper[0], snap.spent_upper[1], snap.spent_lower[0], snap.spent_lower[1],
            start, t, self.alpha, self.sched.epsilon_total, float(self.sched.half_life),
            upper, lower, su_arr, sl_arr,
        )
        buf, base, lo, hi, su, cu, sl, cl, _ = out
        result = _AliveSnapshot(lo, buf[lo - base:hi - base + 1].copy(), (su, cu), (sl, cl))
        if t in self._retain:
            self._snapshots[t] = result
        return result

    def alive_mass(self, t: int) -> float:
        """``P_alpha(tau > t)``."""
        _, probs = self.alive_dist(t)
        return float(math.fsum(probs))

    def conditional_cdf(self, t: int, x):
        """``G_t(x) = P_alpha(S_t <= x | tau > t)``; vectorized over ``x``."""
        offset, probs = self.alive_dist(t)
        total = math.fsum(probs)
        if total <= 0.0:
            raise ValueError(f"no surviving mass at step {t}; conditional CDF undefined")
        cdf = np.cumsum(probs) / total
        idx = np.asarray(x, dtype=np.int64) - offset
        out = np.where(idx < 0, 0.0, cdf[np.clip(idx, 0, cdf.size - 1)])
        return out if out.ndim else float(out)

    def conditional_sf(self, t: int, x):
        """``P_alpha(S_t >= x | tau > t)``; the mirror of :meth:`conditional_cdf`."""
        x = np.asarray(x, dtype=np.int64)
        out = 1.0 - np.asarray(self.conditional_cdf(t, x - 1))
        return out if out.ndim else float(out)

    def monotone_from(self) -> int:
        """First step after which both ``U_t`` and ``L_t`` never decrease (within the built range)."""
        u = self.upper
        lo = self.lower
        bad = np.flatnonzero((np.diff(u) < 0) | (np.diff(lo) < 0))
        return int(bad[-1] + 1) if bad.size else 0

    def jump_table(self) -> tuple[int, np.ndarray]:
        """``(m0, first)`` where ``first[s]`` is the first step ``t >= m0`` with ``L_t >= s``.

        From ``m0`` on both boundaries are nondecreasing, so a stream whose sum
        stays at ``s`` can only resolve at ``first[s]``. Entries past the built
        range hold a value beyond ``extended_to``.
        """
        return self.walk_arrays()[2:]

    def walk_arrays(self) -> tuple[np.ndarray, np.ndarray, int, np.ndarray]:
        """``(upper, lower, m0, first)`` for the built range, cached until the next extension."""
        built = self.extended_to
        jump = self._jump
        if jump is None or jump[0] != built:
            m0 = self.monotone_from()
            lower = self.lower[m0:]
            top = int(max(lower[-1], 0)) + 2
            first = np.searchsorted(lower, np.arange(top), side="left").astype(np.int64) + m0
            first[first > built] = built + 1
            jump = self._jump = (built, self.upper, self.lower, m0, first)
        return jump[1:]


def hoeffding_envelope(alpha: float, lam: float, q: float, t: int) -> tuple[int, int]:
    """Hoeffding envelope ``tα ± sqrt(t (q ln t - ln lam) / 2)``, rounded outward.

    Valid for steps where the spending increments satisfy
    ``eps_t - eps_{t-1} >= lam * t**-q``.
    """
    arg = t * (q * math.log(t) - math.log(lam)) / 2.0 if t > 0 else -1.0
    if arg < 0:
        raise ValueError(f"envelope undefined at t={t}: lam * t**-q exceeds 1")
    half = math.sqrt(arg)
    return math.ceil(t * alpha + half), math.floor(t * alpha - half)


_TABLES: dict[tuple, BoundaryTable] = {}
_TABLES_LOCK = threading.Lock()


def boundary_table(alpha: float, sched: SpendingSchedule) -> BoundaryTable:
    """Process-wide shared table for ``(alpha, sched)``."""
    key = (float(alpha), sched)
    with _TABLES_LOCK:
        table = _TABLES.get(key)
        if table is None:
            table = _TABLES[key] = BoundaryTable(alpha, sched)
    return table
