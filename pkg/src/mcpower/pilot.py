"""Pilot sample and the choice of the number of streams ``N``.

``n_blind`` and ``n_pilot`` are the smallest ``N`` for which the run is sure
to stop once at most two streams are open: every split of ``N - 2``
resolved streams into positives and negatives, widened by the two open
ones, must give an admitted interval. ``estimate_n_opt`` then looks above
``n_pilot`` for the ``N`` with the smallest emulated effort.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .engine import walk_block
from .interval import FULL, Interval, interval_union, intersect_with_pilot
from .precision import Fixed, PrecisionRule
from .samplers import OPEN, PILOT_DOMAIN, POSITIVE, Sampler

log = logging.getLogger(__name__)

PLAN_DOMAIN = 3
TIME_CAP = 1e15


@dataclass
class PilotSummary:
    n: int
    t_max: int
    R: int
    A: int
    unresolved: int
    gamma_pilot: float
    epsilon: float
    interval: Interval
    resolved_times: np.ndarray
    effort: int

    @property
    def beta_hat(self) -> float:
        """Add-half estimate of the power from the pilot's resolved streams."""
        return (self.R + 0.5) / (self.R + self.A + 1.0)

    @property
    def survival_at_tmax(self) -> float:
        return self.unresolved / self.n

    def as_dict(self) -> dict:
        return {
            "n": self.n, "t_max": self.t_max, "R": self.R, "A": self.A, "unresolved": self.unresolved,
            "gamma_pilot": self.gamma_pilot,
            "interval": {"low": float(self.interval.low), "high": float(self.interval.high)},
            "effort": self.effort, "beta_hat": self.beta_hat, "survival_at_tmax": self.survival_at_tmax,
        }


def summarize_pilot(codes, steps, t_max: int, gamma_pilot: float, epsilon: float) -> PilotSummary:
    codes = np.asarray(codes)
    steps = np.asarray(steps)
    done = codes != OPEN
    R = int(np.count_nonzero(codes == POSITIVE))
    A = int(np.count_nonzero(done)) - R
    u = codes.size - R - A
    iv = interval_union(R, A, u, gamma_pilot, epsilon)
    effort = int(np.minimum(np.where(done, steps, t_max), t_max).sum())
    return PilotSummary(codes.size, t_max, R, A, u, gamma_pilot, epsilon, iv, np.sort(steps[done]), effort)


def run_pilot(cfg, sampler: Sampler, table) -> PilotSummary:
    """Run ``cfg.pilot_n`` pilot streams until they resolve or reach ``cfg.pilot_tmax``."""
    n, t_max = cfg.pilot_n, cfg.pilot_tmax
    table.extend_to(t_max)
    streams = [sampler.new_stream(i, PILOT_DOMAIN) for i in range(n)]
    ids = np.arange(n)
    codes, steps, _ = walk_block(streams, ids, np.zeros(n, dtype=np.int64), t_max, table)
    return summarize_pilot(codes, steps, t_max, cfg.gamma_pilot_value, cfg.epsilon_value)


# -- minimal N ------------------------------------------------------------------

def balanced_length(n: int, gamma: float, epsilon: float) -> float:
    """Length of the interval with ``N - 2`` streams split evenly and two open."""
    if n < 3:
        return float(interval_union(0, 0, n, gamma, epsilon).length)
    r = (n - 2) // 2
    return float(interval_union(r, n - 2 - r, 2, gamma, epsilon).length)


def _smallest(ok, start: int = 1) -> int:
    """Smallest ``n >= start`` with ``ok(n)``, assuming ``ok`` switches once from False to True."""
    if ok(start):
        return start
    lo, hi = start, 2 * start
    while not ok(hi):
        lo, hi = hi, 2 * hi
        if hi > 1 << 40:
            raise ValueError("no feasible number of streams below 2**40")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def n_blind(delta: float, gamma: float, epsilon: float) -> int:
    """Smallest ``N`` whose balanced interval has length at most ``delta``."""
    if not 0.0 < delta:
        raise ValueError("delta must be positive")
    return _smallest(lambda n: balanced_length(n, gamma, epsilon) <= delta)


def _meeting_range(n: int, gamma: float, epsilon: float, pilot: Interval) -> tuple[int, int]:
    """Range of ``r`` in ``0..n-2`` whose interval ``I(r, n-2-r, 2)`` meets ``pilot``.

    Both endpoints grow with ``r``, so the range is contiguous; outside it the
    intersection is a single point and always admitted.
    """
    m = n - 2

    def low(r):
        return interval_union(r, m - r, 2, gamma, epsilon).low

    def high(r):
        return interval_union(r, m - r, 2, gamma, epsilon).high

    def first(pred):
        # first r in 0..m with pred true (pred monotone False -> True), m+1 if none
        lo, hi = -1, m + 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if pred(mid):
                hi = mid
            else:
                lo = mid
        return hi

    r_lo = first(lambda r: high(r) >= pilot.low)
    r_hi = first(lambda r: low(r) > pilot.high) - 1
    return r_lo, r_hi


def stops_by_two(n: int, rule: PrecisionRule, gamma: float, epsilon: float, pilot: Interval = FULL) -> bool:
    """Whether every split of ``n - 2`` resolutions gives an admitted interval."""
    if n < 3:
        iv = intersect_with_pilot(interval_union(0, 0, n, gamma, epsilon), pilot, warn=False)
        return bool(rule.admits(iv.low, iv.high))
    r_lo, r_hi = _meeting_range(n, gamma, epsilon, pilot)
    for start in range(r_lo, r_hi + 1, 1 << 14):
        r = np.arange(start, min(r_hi, start + (1 << 14) - 1) + 1)
        iv = intersect_with_pilot(interval_union(r, n - 2 - r, 2, gamma, epsilon), pilot, warn=False)
        if not np.all(rule.admits(iv.low, iv.high)):
            return False
    return True


def n_pilot(pilot_interval: Interval, rule: PrecisionRule, gamma: float, epsilon: float) -> int:
    """Smallest ``N`` for which :func:`stops_by_two` holds with the pilot interval."""
    pilot_interval = Interval(float(pilot_interval[0]), float(pilot_interval[1]))
    ok = lambda n: stops_by_two(n, rule, gamma, epsilon, pilot_interval)  # noqa: E731
    n = _smallest(ok)
    # the search assumes one switch; step down past any local bump
    while n > 1 and ok(n - 1):
        n -= 1
    return n


def n_blind_rule(rule: PrecisionRule, gamma: float, epsilon: float) -> int:
    """:func:`n_blind` for a fixed rule, otherwise :func:`n_pilot` without a pilot."""
    if isinstance(rule, Fixed):
        return n_blind(rule.delta, gamma, epsilon)
    return n_pilot(FULL, rule, gamma, epsilon)


# -- effort emulation ------------------------------------------------------------

def tail_survival(t, t_max: float):
    """Approximate ``P[tau > t | tau > t_max]`` as ``sqrt((ln t / t) / (ln t_max / t_max))``."""
    t = np.asarray(t, dtype=float)
    g0 = math.log(t_max) / t_max
    return np.sqrt((np.log(t) / t) / g0)


def tail_quantile(surv, t_max: float):
    """Inverse of :func:`tail_survival`: the ``t >= t_max`` with the given conditional survival."""
    surv = np.asarray(surv, dtype=float)
    g0 = math.log(t_max) / t_max
    with np.errstate(divide="ignore"):
        neg_log_c = -(2.0 * np.log(surv) + math.log(g0))
    # ln t / t = c with x = ln t > 1:  x - ln x = -ln c, solved by Newton from the asymptotic guess
    y = np.minimum(neg_log_c, 1e300)
    x = np.maximum(y + np.log(np.maximum(y, 1.0)), 1.0 + 1e-12)
    for _ in range(4):
        x = np.maximum(x - (x - np.log(x) - y) / (1.0 - 1.0 / x), 1.0 + 1e-12)
    t = np.exp(np.minimum(x, math.log(TIME_CAP)))
    return np.where(surv >= 1.0, float(t_max), np.maximum(t, t_max))


_Y_STEP = 1.0 / 64.0
_C_CELLS = 1 << 16           # uniform grid in the conditional survival
_C_SPLIT = 1.0 / 256.0       # below this the log-spaced table takes over


class _TailTables:
    """Lookup tables for :func:`tail_quantile` used inside the emulation kernel."""

    def __init__(self, t_max: float):
        self.t_max = t_max
        c = np.arange(_C_CELLS + 1) / _C_CELLS
        c[0] = _C_SPLIT
        self.direct = tail_quantile(c, t_max)
        self.y0 = -math.log(math.log(t_max) / t_max)
        y1 = math.log(TIME_CAP) - math.log(math.log(TIME_CAP)) + 1.0
        y = self.y0 + _Y_STEP * np.arange(int((y1 - self.y0) / _Y_STEP) + 2)
        self.log_t = np.log(tail_quantile(np.exp(-(y - self.y0) / 2.0), t_max))


@njit(cache=True)
def _emulated_paths(exps, coins, beta_hat, head_mass, times, direct, log_t, t_max, cum_r, cum_tau):
    # Row i of exps holds n+1 standard exponentials; their normalized partial
    # sums are sorted uniforms, mapped through the stopping-time quantile.
    reps, m = cum_r.shape
    n = m - 1
    n_times = times.size
    surv = 1.0 - head_mass
    last = log_t.size - 1
    cells = direct.size - 1
    for i in range(reps):
        total = 0.0
        for j in range(m):
            total += exps[i, j]
        acc = 0.0
        r = 0
        tau_sum = 0.0
        cum_r[i, 0] = 0
        cum_tau[i, 0] = 0.0
        for j in range(n):
            acc += exps[i, j]
            v = acc / total
            if v < head_mass and n_times > 0:
                k = int(v / head_mass * n_times)
                tau = times[min(k, n_times - 1)]
            else:
                cond = (1.0 - v) / surv
                if cond >= 1.0:
                    tau = t_max
                elif cond >= _C_SPLIT:
                    pos = cond * cells
                    k = int(pos)
                    f = pos - k
                    tau = math.ceil(direct[k] * (1.0 - f) + direct[min(k + 1, cells)] * f)
                else:
                    # conditional survival c maps to y = y0 - 2 ln c
                    pos = -2.0 * math.log(max(cond, 1e-300)) / _Y_STEP
                    k = int(pos)
                    if k >= last:
                        x = log_t[last]
                    else:
                        f = pos - k
                        x = log_t[k] * (1.0 - f) + log_t[k + 1] * f
                    tau = math.ceil(math.exp(x))
                tau = max(tau, t_max)
            if coins[i, j] < beta_hat:
                r += 1
            tau_sum += tau
            cum_r[i, j + 1] = r
            cum_tau[i, j + 1] = tau_sum


def _chunk_efforts(exps, coins, n: int, pilot: PilotSummary, tables: _TailTables, rule,
                   gamma: float, epsilon: float) -> np.ndarray:
    k_reps = exps.shape[0]
    cum_r = np.empty((k_reps, n + 1), dtype=np.int64)
    cum_tau = np.empty((k_reps, n + 1))
    _emulated_paths(exps, coins, np.float32(pilot.beta_hat), 1.0 - pilot.survival_at_tmax,
                    np.asarray(pilot.resolved_times, dtype=float), tables.direct, tables.log_t,
                    tables.t_max, cum_r, cum_tau)
    rows = np.arange(k_reps)

    def admitted(k):
        # rows often share (k, R); evaluate each pair once
        key, inv = np.unique(k * (n + 1) + cum_r[rows, k], return_inverse=True)
        kk, R = np.divmod(key, n + 1)
        iv = intersect_with_pilot(interval_union(R, kk - R, n - kk, gamma, epsilon), pilot.interval, warn=False)
        return np.asarray(rule.admits(iv.low, iv.high))[inv.ravel()]

    lo = np.full(k_reps, -1)
    hi = np.full(k_reps, n)
    ok_end = admitted(hi)
    while np.any(hi - lo > 1):
        active = hi - lo > 1
        mid = (lo + hi) // 2
        ok = admitted(mid) & active
        hi = np.where(ok, mid, hi)
        lo = np.where(active & ~ok, mid, lo)
    k = hi
    t_stop = np.where(k > 0, cum_tau[rows, k] - cum_tau[rows, np.maximum(k - 1, 0)], 0.0)
    effort = cum_tau[rows, k] + (n - k) * t_stop
    # a run that never admits resolves everything
    return np.where(ok_end, effort, cum_tau[:, -1])


def _draws(rng: np.random.Generator, reps: int, n: int):
    return rng.standard_exponential((reps, n + 1)), rng.random((reps, n), dtype=np.float32)


def emulate_effort(n: int, pilot: PilotSummary, rule, gamma: float, epsilon: float,
                   reps: int, rng: np.random.Generator) -> np.ndarray:
    """Emulated main-run effort for ``n`` streams, one value per replicate.

    Sorted stopping times come straight from sorted uniforms (normalized
    exponential spacings) pushed through the quantile function: resolved
    pilot times with probability ``1 - survival``, the fitted tail beyond
    ``t_max`` otherwise. Outcomes are Bernoulli(``beta_hat``). The stop index
    is found by bisection, since more resolutions only shrink the interval.
    """
    tables = _TailTables(max(float(pilot.t_max), 3.0))
    out = np.empty(reps)
    chunk = max(1, 2_000_000 // (n + 1))
    for start in range(0, reps, chunk):
        k_reps = min(chunk, reps - start)
        exps, coins = _draws(rng, k_reps, n)
        out[start:start + k_reps] = _chunk_efforts(exps, coins, n, pilot, tables, rule, gamma, epsilon)
    return out


def estimate_n_opt(pilot: PilotSummary | None, n_lo: int, n_hi: int, cfg) -> tuple[int, list[dict]]:
    """``N`` in ``[n_lo, n_hi]`` with the smallest mean emulated effort.

    Returns ``(N, grid)`` where ``grid`` lists each candidate with its mean
    effort and standard error.
    """
    if pilot is None or pilot.survival_at_tmax == 0.0:
        if pilot is not None:
            log.warning("every pilot stream resolved; the tail fit is undefined, using N = %d", n_lo)
        return n_lo, []
    n_hi = max(n_lo, n_hi)
    grid = np.unique(np.round(np.geomspace(n_lo, n_hi, cfg.nopt_grid)).astype(np.int64))
    tables = _TailTables(max(float(pilot.t_max), 3.0))
    rng = np.random.default_rng([int(cfg.seed), PLAN_DOMAIN])
    # common random numbers: every N uses a prefix of the same draws
    n_max = int(grid[-1])
    efforts = {int(n): [] for n in grid}
    chunk = max(1, 2_000_000 // (n_max + 1))
    for start in range(0, cfg.nopt_reps, chunk):
        exps, coins = _draws(rng, min(chunk, cfg.nopt_reps - start), n_max)
        for n in efforts:
            efforts[n].append(_chunk_efforts(exps[:, :n + 1], coins[:, :n], n, pilot, tables,
                                             cfg.rule, cfg.gamma_main, cfg.epsilon_value))
    rows = []
    for n, parts in efforts.items():
        eff = np.concatenate(parts)
        rows.append({"N": n, "mean_effort": float(eff.mean()),
                     "se": float(eff.std(ddof=1) / math.sqrt(eff.size)) if eff.size > 1 else 0.0})
    best = min(rows, key=lambda row: (row["mean_effort"], row["N"]))
    return best["N"], rows
