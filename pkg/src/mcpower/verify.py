"""Invariant checks behind ``mcpower verify``.

Each check compares production code with an independent computation from
:mod:`mcpower.oracle` or with a property that must hold exactly, and
returns a :class:`Check`. The test suite calls the same functions.
"""

from __future__ import annotations

import itertools
import math
import time
from typing import Callable, NamedTuple

import numpy as np

from . import oracle
from .boundary import BoundaryTable, hoeffding_envelope
from .interval import clopper_pearson, interval_union
from .precision import DELTA0, DELTA1, DELTA2, DELTA3, TIE, PrecisionRule
from .spending import SpendingSchedule

TOL_GUARANTEE = 1e-12
TOL_CONSERVATION = 1e-10


class Check(NamedTuple):
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> Check:
    t0 = time.perf_counter()
    ok, detail = fn()
    return Check(name, bool(ok), detail, time.perf_counter() - t0)


# -- spending -------------------------------------------------------------------

def spending_monotone(sched: SpendingSchedule, t_max: int = 1_000_000) -> tuple[bool, str]:
    t = np.arange(t_max + 1, dtype=float)
    eps = sched.epsilon_total * t / (sched.half_life + t)
    ok = eps[0] == 0.0 and np.all(np.diff(eps) >= 0) and np.all(eps < sched.epsilon_total)
    return ok, f"t <= {t_max}"


def spending_increment(sched: SpendingSchedule, t_max: int = 1_000_000) -> tuple[bool, str]:
    """The schedule's reported ``(lam, q, T)`` hold on ``T <= t <= t_max``."""
    lam, q, start = sched.increment_bound()
    t = np.arange(max(start, 1), t_max + 1, dtype=float)
    h = sched.half_life
    inc = sched.epsilon_total * h / ((h + t) * (h + t - 1.0))
    bad = np.flatnonzero(inc < lam * t ** -q)
    if bad.size:
        return False, f"lam={lam:.3g}, q={q:g} fails first at t={int(t[bad[0]])}"
    return True, f"lam={lam:.3g}, q={q:g}, T={start}"


# -- boundaries -------------------------------------------------------------------

def fresh_table(alpha: float, sched: SpendingSchedule, t_max: int, keep_all: bool = False) -> BoundaryTable:
    """An unshared table built to ``t_max``; ``keep_all`` retains every alive distribution."""
    table = BoundaryTable(alpha, sched)
    if keep_all:
        table.retain(range(1, t_max + 1))
    return table.extend_to(t_max)


def crossing_guarantee(table: BoundaryTable, t_max: int, p: float | None = None) -> tuple[bool, str]:
    """Oracle absorption at ``p`` (default ``alpha``) stays within ``eps_t`` on both sides.

    For ``p > alpha`` only the lower side is a wrong decision and only it is checked.
    """
    p_eval = table.alpha if p is None else p
    up, down, _ = oracle.crossing_probs(p_eval, table.upper, table.lower, t_max)
    eps = table.epsilon(np.arange(t_max + 1))
    worst_down = float(np.max(down - eps))
    if p is None or p == table.alpha:
        worst_up = float(np.max(up - eps))
        ok = worst_up <= TOL_GUARANTEE and worst_down <= TOL_GUARANTEE
        return ok, f"max excess upper {worst_up:.2e}, lower {worst_down:.2e}"
    return worst_down <= TOL_GUARANTEE, f"p={p_eval:g}: max excess lower {worst_down:.2e}"


def boundary_minimality(table: BoundaryTable, t_max: int) -> tuple[bool, str]:
    """Moving ``U_t`` down or ``L_t`` up by one would overspend ``eps_t``.

    Recomputed with a separate forward pass over all levels ``0..t``.
    """
    alpha = table.alpha
    upper, lower = table.upper, table.lower
    dist = np.zeros(t_max + 2)
    dist[0] = 1.0
    levels = np.arange(t_max + 2)
    spent_u = spent_l = 0.0
    failures = []
    for t in range(1, t_max + 1):
        moved = np.empty_like(dist)
        moved[0] = dist[0] * (1.0 - alpha)
        moved[1:] = dist[1:] * (1.0 - alpha) + dist[:-1] * alpha
        eps_t = float(table.epsilon(t))
        u, lo = int(upper[t]), int(lower[t])
        # one step tighter on each side must break the budget (or cross the other boundary)
        if u - 1 > lo and spent_u + math.fsum(moved[levels >= u - 1]) <= eps_t:
            failures.append(("U", t))
        if lo + 1 < u and spent_l + math.fsum(moved[levels <= lo + 1]) <= eps_t:
            failures.append(("L", t))
        hit_u = levels >= u
        hit_l = levels <= lo
        spent_u += math.fsum(moved[hit_u])
        spent_l += math.fsum(moved[hit_l])
        moved[hit_u | hit_l] = 0.0
        dist = moved
    if failures:
        return False, f"{len(failures)} non-minimal steps, first {failures[0]}"
    return True, f"t <= {t_max}"


def conservation(table: BoundaryTable, t_max: int) -> tuple[bool, str]:
    worst = 0.0
    for t in range(1, t_max + 1):
        total = table.alive_mass(t) + table.spent_upper[t] + table.spent_lower[t]
        worst = max(worst, abs(total - 1.0))
    return worst <= TOL_CONSERVATION, f"max drift {worst:.2e}"


def oracle_agreement(table: BoundaryTable, steps) -> tuple[bool, str]:
    """Alive distribution at ``p = alpha`` against the oracle DP, sup norm."""
    worst = 0.0
    for t in steps:
        _, _, state = oracle.crossing_probs(table.alpha, table.upper, table.lower, t)
        offset, probs = table.alive_dist(t)
        full = np.zeros(t + 1)
        full[offset:offset + probs.size] = probs
        worst = max(worst, float(np.max(np.abs(full - state.dist))))
    return worst <= TOL_CONSERVATION, f"max |diff| {worst:.2e} at t in {list(steps)}"


def envelope(table: BoundaryTable, t_max: int, lam: float, q: float, t_min: int = 2) -> tuple[bool, str]:
    """``L_t``/``U_t`` inside the Hoeffding envelope for ``t_min <= t <= t_max``."""
    bad = []
    for t in range(max(t_min, 2), t_max + 1):
        hi, lo = hoeffding_envelope(table.alpha, lam, q, t)
        if table.upper[t] > hi or table.lower[t] < lo:
            bad.append(t)
    if bad:
        return False, f"lam={lam:.3g}, q={q:g}: {len(bad)} violations, first t={bad[:5]}"
    return True, f"lam={lam:.3g}, q={q:g}, {max(t_min, 2)} <= t <= {t_max}"


# -- intervals -------------------------------------------------------------------

def cp_coverage(n_max: int = 25, gammas=(0.01, 0.05), n_p: int = 101) -> tuple[bool, str]:
    """Exact coverage of production Clopper-Pearson over a grid of ``p``."""
    ps = np.linspace(0.0, 1.0, n_p)
    worst = 1.0
    for gamma in gammas:
        for n in range(0, n_max + 1):
            iv = clopper_pearson(np.arange(n + 1), n, gamma)
            low, high = np.atleast_1d(iv.low), np.atleast_1d(iv.high)
            for p in ps:
                pmf = oracle.binom_pmf(n, p)
                cover = math.fsum(pmf[(low <= p) & (p <= high)])
                worst = min(worst, cover - (1.0 - gamma))
    return worst >= -1e-12, f"min coverage margin {worst:.3g}"


def cp_against_bisection(n_max: int = 30, gamma: float = 0.05) -> tuple[bool, str]:
    worst = 0.0
    for n in range(n_max + 1):
        iv = clopper_pearson(np.arange(n + 1), n, gamma)
        for r in range(n + 1):
            lo, hi = oracle.clopper_pearson_bisect(r, n, gamma)
            worst = max(worst, abs(np.atleast_1d(iv.low)[r] - lo), abs(np.atleast_1d(iv.high)[r] - hi))
    return worst <= 1e-10, f"max endpoint difference {worst:.2e}"


def _triples(total: int):
    for n in range(total + 1):
        for r in range(n + 1):
            for a in range(n - r + 1):
                yield r, a, n - r - a


def hull_equals_union(total: int = 30, gammas=(0.01, 0.05), epsilons=(0.0, 1e-4)) -> tuple[bool, str]:
    """Hull formula against the explicit union of its ``u + 1`` member intervals."""
    bad = 0
    count = 0
    for gamma in gammas:
        for eps in epsilons:
            cp_cache = {}

            def cp(r, n, _gamma):
                if n not in cp_cache:
                    iv = clopper_pearson(np.arange(n + 1), n, gamma)
                    cp_cache[n] = (np.atleast_1d(iv.low), np.atleast_1d(iv.high))
                lows, highs = cp_cache[n]
                return lows[r], highs[r]

            for r, a, u in _triples(total):
                iv = interval_union(r, a, u, gamma, eps)
                lo, hi = oracle.explicit_union(r, a, u, gamma, eps, cp=cp)
                count += 1
                bad += not (iv.low == lo and iv.high == hi)
    return bad == 0, f"{bad} mismatches over {count} cases"


def nesting(total: int = 30, gammas=(0.01, 0.05), epsilons=(0.0, 1e-4)) -> tuple[bool, str]:
    """Resolving one open stream either way never widens the interval."""
    bad = 0
    count = 0
    for gamma in gammas:
        for eps in epsilons:
            for r, a, u in _triples(total):
                if u == 0:
                    continue
                outer = interval_union(r, a, u, gamma, eps)
                for inner in (interval_union(r + 1, a, u - 1, gamma, eps),
                              interval_union(r, a + 1, u - 1, gamma, eps)):
                    count += 1
                    bad += not (outer.low <= inner.low and inner.high <= outer.high)
    return bad == 0, f"{bad} violations over {count} pairs"


# -- joint test -------------------------------------------------------------------

def joint_dominance(table: BoundaryTable, n_max: int = 3, t_max: int = 12, ps=(0.06, 0.10, 0.20),
                    etas=(0.05, 0.2, 0.5, 0.7, 0.9), upper_tail: bool = False, steps=None) -> tuple[bool, str]:
    """Exact law of the joint-test count against its binomial bound.

    Every open stream has its ``p`` from ``ps`` (all above ``alpha`` for the
    lower-tail count, at most ``alpha`` for ``upper_tail``). The conditional
    law of each partial sum comes from path enumeration, the joint law of
    the sorted sums from the product over streams. Checks
    ``P[T >= c] <= P[Bin(n - r + 1, eta) >= c]`` for every ``c``, ``r`` and
    ``eta``, with ``r`` playing the part of ``a`` for the upper tail.
    ``steps`` replaces ``1..t_max``; past step 22 the laws come from the DP.

    Early on the lower boundary sits at -1 and ``G_t(0)`` is above one half,
    so small ``eta`` only exercise the bound from the point where the
    boundary has moved.
    """
    worst = -math.inf
    cases = 0
    for t in (range(1, t_max + 1) if steps is None else steps):
        levels = np.arange(t + 1)
        pmfs = {p: oracle.enumerate_conditional(p, table.upper, table.lower, t) for p in ps}
        score = np.asarray(table.conditional_sf(t, levels) if upper_tail else table.conditional_cdf(t, levels))
        for n in range(1, n_max + 1):
            grid = np.array(list(itertools.product(range(t + 1), repeat=n)), dtype=np.int64)
            ordered = np.sort(grid, axis=1)
            if upper_tail:
                ordered = ordered[:, ::-1]      # counted positions run from the smallest sum up
            tail_scores = score[ordered]
            for combo in itertools.combinations_with_replacement(ps, n):
                weight = np.prod([pmfs[p][grid[:, j]] for j, p in enumerate(combo)], axis=0)
                for r in range(1, n + 1):
                    for eta in etas:
                        count = np.count_nonzero(tail_scores[:, r - 1:] <= eta, axis=1)
                        for c in range(1, n - r + 2):
                            lhs = math.fsum(weight[count >= c])
                            worst = max(worst, lhs - oracle.binom_tail(n - r + 1, eta, c))
                            cases += 1
    return worst <= 1e-12, f"{cases} cases, max excess {worst:.2e}"


# -- precision rules ---------------------------------------------------------------

BUILTIN_RULES = {"delta0": DELTA0, "delta1": DELTA1, "delta2": DELTA2, "delta3": DELTA3}


def _grid(n: int):
    g = np.arange(n) / (n - 1)
    lo, hi = np.meshgrid(g, g, indexing="ij")
    keep = lo <= hi
    return lo[keep], hi[keep]


def rule_midpoint_equivalence(rule: PrecisionRule, n: int = 201) -> tuple[bool, str]:
    """``admits`` agrees with ``length <= delta_at(midpoint)``; ties follow ``attains``."""
    lo, hi = _grid(n)
    length = hi - lo
    mid = (lo + hi) / 2.0
    d = rule.delta_at(mid)
    tie = np.abs(length - d) <= TIE
    expected = np.where(tie, rule.attains(mid), length < d)
    got = np.asarray(rule.admits(lo, hi))
    bad = np.flatnonzero(got != expected)
    if bad.size:
        k = bad[0]
        return False, f"{bad.size} mismatches, first [{lo[k]:.3f}, {hi[k]:.3f}]"
    return True, f"{lo.size} intervals"


def rule_shrink_monotone(rule: PrecisionRule, n: int = 201) -> tuple[bool, str]:
    """Admitted intervals stay admitted when either end moves inward by one grid step."""
    lo, hi = _grid(n)
    step = 1.0 / (n - 1)
    ok = np.asarray(rule.admits(lo, hi))
    inner = hi - lo >= step - 1e-15
    bad = ok & inner & ~(np.asarray(rule.admits(lo + step, hi)) & np.asarray(rule.admits(lo, hi - step)))
    return not bad.any(), f"{int(bad.sum())} violations"


def rule_zero_length(rule: PrecisionRule, n: int = 101) -> tuple[bool, str]:
    m = np.linspace(0.0, 1.0, n)
    ok = np.asarray(rule.admits(m, m))
    return bool(ok.all()), f"{int((~ok).sum())} zero-length intervals rejected"


# -- suite ----------------------------------------------------------------------------

def run_checks(alpha: float = 0.05, epsilon: float = 1e-4, half_life: int = 1000, t_max: int = 2000,
               t_minimal: int = 500, quick: bool = False) -> list[Check]:
    """Run every check for one boundary configuration. ``quick`` shrinks the grids."""
    sched = SpendingSchedule(epsilon, half_life)
    table = fresh_table(alpha, sched, t_max, keep_all=True)
    lam, q, start = sched.increment_bound()
    big_t = 10_000 if quick else 1_000_000
    total = 15 if quick else 30
    checks = [
        _timed("spending.monotone", lambda: spending_monotone(sched, big_t)),
        _timed("spending.increment_bound", lambda: spending_increment(sched, big_t)),
        _timed("boundary.crossing_at_alpha", lambda: crossing_guarantee(table, t_max)),
        _timed("boundary.crossing_above_alpha", lambda: crossing_guarantee(table, t_max, min(alpha + 0.02, 1.0))),
        _timed("boundary.minimality", lambda: boundary_minimality(table, min(t_minimal, t_max))),
        _timed("boundary.conservation", lambda: conservation(table, t_max)),
        _timed("boundary.oracle_agreement",
               lambda: oracle_agreement(table, sorted({1, 10, 100, min(500, t_max), t_max}))),
        _timed("boundary.envelope", lambda: envelope(table, t_max, lam, q, start)),
        _timed("interval.cp_coverage", lambda: cp_coverage(15 if quick else 25)),
        _timed("interval.cp_bisection", lambda: cp_against_bisection(15 if quick else 30)),
        _timed("interval.hull_equals_union", lambda: hull_equals_union(total)),
        _timed("interval.nesting", lambda: nesting(total)),
        _timed("joint.dominance_lower", lambda: joint_dominance(table, t_max=min(12, t_max))),
        _timed("joint.dominance_upper",
               lambda: joint_dominance(table, t_max=min(12, t_max), ps=(alpha / 5, alpha / 2, alpha), upper_tail=True)),
        _timed("joint.dominance_late",
               lambda: joint_dominance(table, n_max=2, ps=(min(1.2 * alpha, 1.0), min(2 * alpha, 1.0)),
                                       etas=(0.01, 0.05, 0.2), steps=[min(300, t_max)])),
    ]
    for name, rule in BUILTIN_RULES.items():
        checks.append(_timed(f"rule.{name}.midpoint", lambda rule=rule: rule_midpoint_equivalence(rule)))
        checks.append(_timed(f"rule.{name}.shrink", lambda rule=rule: rule_shrink_monotone(rule)))
        checks.append(_timed(f"rule.{name}.zero_length", lambda rule=rule: rule_zero_length(rule)))
    return checks


def format_checks(checks: list[Check]) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'check':<{width}}  result  seconds  detail"]
    for c in checks:
        lines.append(f"{c.name:<{width}}  {'PASS' if c.passed else 'FAIL':<6}  {c.seconds:7.2f}  {c.detail}")
    return "\n".join(lines)
