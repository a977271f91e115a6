"""Brute-force references for checking the production code.

Nothing here imports the boundary recursion or the beta-quantile interval
code. Boundaries are taken as plain integer sequences, absorption is
computed by a full-support forward DP or by enumerating every path, and
binomial tails are summed term by term in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


@dataclass
class ExactDp:
    """State of the full-support DP after some step."""

    p: float
    t: int
    dist: np.ndarray          # dist[s] = P(S_t = s, tau > t) for s = 0..t
    absorbed_upper: float
    absorbed_lower: float

    @property
    def total(self) -> float:
        return math.fsum(self.dist) + self.absorbed_upper + self.absorbed_lower


def crossing_probs(p: float, upper, lower, t_max: int):
    """Exact ``P_p(tau <= t, hit upper)`` and ``P_p(tau <= t, hit lower)`` for ``t = 0..t_max``.

    ``upper[t]``/``lower[t]`` are the boundaries at step ``t`` (index 0 unused).
    Returns ``(upper_by_t, lower_by_t, final_state)``.
    """
    if t_max > 10_000:
        raise ValueError("crossing_probs is limited to t_max <= 10000")
    upper = np.asarray(upper)
    lower = np.asarray(lower)
    dist = np.zeros(t_max + 2)
    dist[0] = 1.0
    up = np.zeros(t_max + 1)
    down = np.zeros(t_max + 1)
    acc_up = 0.0
    acc_down = 0.0
    levels = np.arange(t_max + 2)
    for t in range(1, t_max + 1):
        moved = np.empty_like(dist)
        moved[0] = dist[0] * (1.0 - p)
        moved[1:] = dist[1:] * (1.0 - p) + dist[:-1] * p
        hit_up = levels >= upper[t]
        hit_down = levels <= lower[t]
        acc_up += math.fsum(moved[hit_up])
        acc_down += math.fsum(moved[hit_down])
        moved[hit_up | hit_down] = 0.0
        dist = moved
        up[t] = acc_up
        down[t] = acc_down
    state = ExactDp(p, t_max, dist[: t_max + 1].copy(), acc_up, acc_down)
    return up, down, state


def conditional_pmf_dp(p: float, upper, lower, t: int) -> np.ndarray:
    """``P_p(S_t = s | tau > t)`` for ``s = 0..t`` via :func:`crossing_probs`."""
    _, _, state = crossing_probs(p, upper, lower, t)
    mass = math.fsum(state.dist)
    if mass <= 0:
        raise ValueError(f"no surviving paths at step {t}")
    return state.dist / mass


def enumerate_conditional(p: float, upper, lower, t: int) -> np.ndarray:
    """``P_p(S_t = s | tau > t)`` for ``s = 0..t`` by listing all ``2**t`` paths.

    Falls back to the DP for ``t > 22``.
    """
    if t > 22:
        return conditional_pmf_dp(p, upper, lower, t)
    upper = np.asarray(upper)
    lower = np.asarray(lower)
    pmf = np.zeros(t + 1)
    chunk = 1 << 16
    steps = np.arange(t)
    for start in range(0, 1 << t, chunk):
        codes = np.arange(start, min(start + chunk, 1 << t), dtype=np.int64)
        bits = (codes[:, None] >> steps[None, :]) & 1
        sums = np.cumsum(bits, axis=1)
        alive = np.ones(codes.size, dtype=bool)
        for j in range(t):
            s = sums[:, j]
            alive &= (s > lower[j + 1]) & (s < upper[j + 1])
        k = sums[:, -1] if t > 0 else np.zeros(codes.size, dtype=np.int64)
        weight = p ** k * (1.0 - p) ** (t - k)
        np.add.at(pmf, k[alive], weight[alive])
    mass = math.fsum(pmf)
    if mass <= 0:
        raise ValueError(f"no surviving paths at step {t}")
    return pmf / mass


def binom_tail(n: int, p: float, k: int) -> float:
    """``P[Bin(n, p) >= k]`` summed exactly term by term."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    j = np.arange(k, n + 1, dtype=float)
    logs = gammaln(n + 1.0) - gammaln(j + 1.0) - gammaln(n - j + 1.0) + j * math.log(p) + (n - j) * math.log1p(-p)
    return min(1.0, math.fsum(np.sort(np.exp(logs))))


def binom_cdf(n: int, p: float, k: int) -> float:
    """``P[Bin(n, p) <= k]``."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    return binom_tail(n, 1.0 - p, n - k)


def binom_pmf(n: int, p: float) -> np.ndarray:
    j = np.arange(n + 1, dtype=float)
    if p <= 0.0 or p >= 1.0:
        out = np.zeros(n + 1)
        out[0 if p <= 0.0 else n] = 1.0
        return out
    logs = gammaln(n + 1.0) - gammaln(j + 1.0) - gammaln(n - j + 1.0) + j * math.log(p) + (n - j) * math.log1p(-p)
    return np.exp(logs)


def _bisect(f, lo: float, hi: float, tol: float) -> float:
    # f(lo) < 0 <= f(hi), f nondecreasing
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson_bisect(r: int, n: int, gamma: float, tol: float = 1e-13) -> tuple[float, float]:
    """Clopper-Pearson endpoints by bisection on exact binomial tails."""
    if not 0 <= r <= n:
        raise ValueError("need 0 <= r <= n")
    if n == 0:
        return 0.0, 1.0
    half = gamma / 2.0
    low = 0.0 if r == 0 else _bisect(lambda x: binom_tail(n, x, r) - half, 0.0, 1.0, tol)
    high = 1.0 if r == n else _bisect(lambda x: half - binom_cdf(n, x, r), 0.0, 1.0, tol)
    return low, high


def explicit_union(r: int, a: int, u: int, gamma: float, epsilon: float, cp=clopper_pearson_bisect):
    """Union of the widened intervals over every ``r_inf`` in ``r..r+u``, member by member."""
    n = r + a + u
    lows, highs = [], []
    for r_inf in range(r, r + u + 1):
        lo, hi = cp(r_inf, n, gamma)
        lows.append(min(max((lo - epsilon) / (1.0 - epsilon), 0.0), 1.0))
        highs.append(min(max(hi / (1.0 - epsilon), 0.0), 1.0))
    return min(lows), max(highs)


def cp_coverage(n: int, gamma: float, p: float, cp=clopper_pearson_bisect) -> float:
    """Exact coverage ``sum_r P[Bin(n,p)=r] 1{p in CP(r,n)}``."""
    pmf = binom_pmf(n, p)
    cover = 0.0
    for r in range(n + 1):
        lo, hi = cp(r, n, gamma)
        if lo <= p <= hi:
            cover += pmf[r]
    return cover
