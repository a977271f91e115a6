import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcpower import oracle
from mcpower.interval import FULL, Interval, interval_union
from mcpower.joint import (
    JointTestState,
    binomial_tail,
    checkpoint,
    choose_ra,
    decide,
    test_statistics as joint_counts,
)
from mcpower.precision import Fixed
from mcpower.spending import JointSpendingSchedule
from mcpower.verify import joint_dominance

GAMMA, EPS = 0.05, 1e-4


def test_choose_ra_none_needed_when_admitted():
    assert choose_ra(500, 500, 10, Fixed(0.5), GAMMA, EPS) == (0, 0)


def test_choose_ra_infeasible():
    # two open streams and no resolved ones can never give a short interval
    assert choose_ra(0, 0, 2, Fixed(0.01), GAMMA, EPS) is None


def test_choose_ra_is_minimal():
    R, A, u = 300, 300, 60
    rule = Fixed(0.15)
    r, a = choose_ra(R, A, u, rule, GAMMA, EPS, prefer="positive")
    m = r + a
    assert r - a in (0, 1)
    iv = interval_union(R + r, A + a, u - m, GAMMA, EPS)
    assert rule.admits(iv.low, iv.high)
    prev = interval_union(R + (m - 1 + 1) // 2, A + (m - 1) // 2, u - m + 1, GAMMA, EPS)
    assert not rule.admits(prev.low, prev.high)


@pytest.mark.parametrize("prefer, pilot, odd_side", [
    ("positive", FULL, "r"), ("negative", FULL, "a"),
    ("pilot", Interval(0.6, 0.9), "r"), ("pilot", Interval(0.1, 0.3), "a"),
])
def test_choose_ra_odd_extra(prefer, pilot, odd_side):
    for u in range(5, 80, 3):
        ra = choose_ra(200, 200, u, Fixed(0.2), GAMMA, EPS, pilot, prefer)
        if ra is None or sum(ra) % 2 == 0:
            continue
        r, a = ra
        assert (r > a) == (odd_side == "r")


def test_choose_ra_bad_prefer():
    with pytest.raises(ValueError):
        choose_ra(1, 1, 3, Fixed(0.5), GAMMA, EPS, prefer="sideways")
    with pytest.raises(ValueError):
        choose_ra(1, 1, 0, Fixed(0.5), GAMMA, EPS)


def test_statistics_at_center(table):
    t = 500
    x = np.arange(int(table.lower[t]) + 1, int(table.upper[t]))
    g = table.conditional_cdf(t, x)
    mid = int(x[np.searchsorted(g, 0.5)])
    sums = np.full(20, mid)
    assert joint_counts(sums, table, t, 3, 3, 0.05) == (0, 0)


def test_statistics_lower_tail(table):
    t = 500
    low = int(table.lower[t]) + 1
    assert table.conditional_cdf(t, low) <= 0.05
    sums = np.sort(np.concatenate([np.full(20, low), np.full(80, 25)]))
    t_plus, _ = joint_counts(sums, table, t, 1, 0, 0.05)
    assert t_plus == 20
    assert binomial_tail(100, 0.05, 20) == pytest.approx(oracle.binom_tail(100, 0.05, 20), rel=1e-9)
    dec = decide(t_plus, 0, 100, 1, 0, 0.05, 1e-4)
    assert dec.reject_plus and dec.both_reject


def test_statistics_require_sorted(table):
    with pytest.raises(ValueError):
        joint_counts([3, 1], table, 100, 1, 1, 0.05)
    with pytest.raises(ValueError):
        joint_counts([1, 3], table, 100, 3, 0, 0.05)


@given(data=st.data(), t=st.sampled_from([1, 7, 60, 400, 2000]), n=st.integers(1, 40))
def test_overlap_counting(table, data, t, n):
    # positions r..n-a+1 are counted by at least one statistic unless the
    # sum sits on the median atom, where both tails exceed one half
    lo, hi = int(table.lower[t]) + 1, int(table.upper[t]) - 1
    sums = np.sort(np.array(data.draw(st.lists(st.integers(lo, hi), min_size=n, max_size=n))))
    r = data.draw(st.integers(1, n))
    a = data.draw(st.integers(1, n - r + 1))
    t_plus, t_minus = joint_counts(sums, table, t, r, a, 0.5)
    overlap = sums[r - 1:n - a + 1]
    both_high = (np.asarray(table.conditional_cdf(t, overlap)) > 0.5) & \
                (np.asarray(table.conditional_sf(t, overlap)) > 0.5)
    assert t_plus + t_minus >= (n - r - a + 2) - int(both_high.sum())


@pytest.mark.parametrize("t", [1, 2, 50, 1000])
def test_median_atom_is_unique(table, t):
    x = np.arange(int(table.lower[t]) + 1, int(table.upper[t]))
    both = (np.asarray(table.conditional_cdf(t, x)) > 0.5) & (np.asarray(table.conditional_sf(t, x)) > 0.5)
    assert both.sum() <= 1


def test_decide_edge_cases():
    assert not decide(0, 0, 50, 1, 1, 0.05, 0.01).both_reject
    # an empty hypothesis is rejected for free
    dec = decide(0, 0, 50, 0, 0, 0.05, 0.01)
    assert dec.reject_plus and dec.reject_minus
    assert binomial_tail(10, 0.3, 0) == 1.0


def test_dominance_exact_small(table):
    ok, detail = joint_dominance(table, n_max=2, t_max=8)
    assert ok, detail


def test_dominance_upper_tail(table):
    ok, detail = joint_dominance(table, n_max=3, t_max=12, ps=(0.01, 0.025, 0.05), upper_tail=True)
    assert ok, detail


def test_dominance_check_detects_violation(table):
    # with p below alpha the lower-tail hypothesis is false and the bound fails
    ok, _ = joint_dominance(table, n_max=2, t_max=8, ps=(0.001,))
    assert not ok


@pytest.mark.parametrize("upper_tail, ps", [(False, (0.06, 0.1)), (True, (0.02, 0.05))])
def test_dominance_later_steps(table, upper_tail, ps):
    # by step 300 the lower boundary has moved, so small eta bind as well
    ok, detail = joint_dominance(table, n_max=2, ps=ps, etas=(0.01, 0.05, 0.2), upper_tail=upper_tail,
                                 steps=[300, 700])
    assert ok, detail


def test_checkpoint_records(table):
    state = JointTestState(0.05, JointSpendingSchedule(0.001, 100))
    t = 200
    table.retain([t])
    low = int(table.lower[t]) + 1
    open_sums = np.full(40, low)
    rec, adjusted = checkpoint(state, t, 500, 500, open_sums, table, Fixed(0.08), GAMMA, EPS)
    assert rec.t == t and rec.unresolved == 40
    assert rec.xi == pytest.approx(0.001 * (2 / 22 - 1 / 21))
    assert rec.r is not None and rec.a is not None
    if rec.decision == "both_reject":
        assert adjusted is not None
    rec2, adj2 = checkpoint(state, 300, 0, 0, np.zeros(2, dtype=int), table, Fixed(0.01), GAMMA, EPS)
    assert rec2.decision == "infeasible" and adj2 is None
    assert len(state.history) == 2
    assert state.spent == pytest.approx(rec.xi)
