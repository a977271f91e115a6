import numpy as np
import pytest

from mcpower import oracle
from mcpower.boundary import BoundaryTable, boundary_table, hoeffding_envelope
from mcpower.spending import SpendingSchedule
from mcpower.verify import (
    boundary_minimality,
    conservation,
    crossing_guarantee,
    envelope,
    fresh_table,
    oracle_agreement,
)

ALPHA = 0.05


def test_first_step(table):
    assert table.upper[1] == 2
    assert table.lower[1] == -1
    assert table.upper[0] == 1 and table.lower[0] == -1


def test_tiny_budget_keeps_trivial_boundaries():
    # while alpha**t and (1-alpha)**t exceed eps_t no contact is allowed
    table = BoundaryTable(ALPHA, SpendingSchedule(1e-12)).extend_to(5)
    for t in range(1, 6):
        assert table.upper[t] == t + 1
        assert table.lower[t] == -1


def test_envelope_examples():
    assert hoeffding_envelope(0.05, 1.0, 2.0, 1000) == (134, -34)
    hi, lo = hoeffding_envelope(0.5, 1.0, 2.0, 2)
    assert hi - 1 == 1 - lo
    with pytest.raises(ValueError):
        hoeffding_envelope(0.05, 10.0, 2.0, 1)


def test_upper_at_1000_within_envelope(table):
    assert table.upper[1000] <= 134
    assert table.lower[1000] >= -34


@pytest.mark.parametrize("x, expected", [(0, 0.95), (1, 1.0), (-1, 0.0)])
def test_conditional_cdf_first_step(table, x, expected):
    assert table.conditional_cdf(1, x) == pytest.approx(expected, abs=1e-15)


def test_conditional_cdf_edges(table):
    for t in (10, 50, 500, 2000):
        assert table.conditional_cdf(t, int(table.upper[t]) - 1) == pytest.approx(1.0, abs=1e-12)
        assert table.conditional_cdf(t, int(table.lower[t])) == 0.0
        x = np.arange(int(table.lower[t]), int(table.upper[t]) + 1)
        g = table.conditional_cdf(t, x)
        assert np.all(np.diff(g) >= 0)
        sf = table.conditional_sf(t, x)
        assert np.allclose(sf[1:], 1.0 - g[:-1], atol=1e-15)


def test_crossing_guarantee_at_alpha(table):
    ok, detail = crossing_guarantee(table, 2000)
    assert ok, detail


@pytest.mark.parametrize("p", [0.06, 0.07, 0.2])
def test_lower_crossing_above_alpha(table, p):
    ok, detail = crossing_guarantee(table, 2000, p)
    assert ok, detail


def test_minimality(table):
    ok, detail = boundary_minimality(table, 500)
    assert ok, detail


def test_conservation(table):
    ok, detail = conservation(table, 2000)
    assert ok, detail


def test_alive_distribution_matches_oracle(table):
    ok, detail = oracle_agreement(table, [1, 2, 3, 17, 250, 1999])
    assert ok, detail


def test_envelope_with_valid_constants(table, sched):
    lam, q, start = sched.increment_bound()
    ok, detail = envelope(table, 2000, lam, q, start)
    assert ok, detail


def test_lazy_extension_matches_single_build(sched):
    a = BoundaryTable(ALPHA, sched)
    for t in (7, 64, 65, 300, 1200):
        a.extend_to(t)
    b = BoundaryTable(ALPHA, sched).extend_to(1200)
    assert np.array_equal(a.upper[:1201], b.upper[:1201])
    assert np.array_equal(a.lower[:1201], b.lower[:1201])
    assert np.array_equal(a.spent_upper[:1201], b.spent_upper[:1201])


def test_recomputed_distribution_matches_retained(sched):
    kept = fresh_table(ALPHA, sched, 900, keep_all=True)
    plain = fresh_table(ALPHA, sched, 900)
    for t in (123, 600, 899):
        o1, p1 = kept.alive_dist(t)
        o2, p2 = plain.alive_dist(t)
        assert o1 == o2
        assert np.allclose(p1, p2, rtol=1e-12, atol=1e-300)


def test_shared_table_cache(sched):
    assert boundary_table(ALPHA, sched) is boundary_table(ALPHA, SpendingSchedule(1e-4, 1000))
    assert boundary_table(ALPHA, sched) is not boundary_table(0.01, sched)


def test_jump_table(table):
    upper, lower, m0, first = table.walk_arrays()
    built = table.extended_to
    assert np.all(np.diff(upper[m0:built + 1]) >= 0)
    assert np.all(np.diff(lower[m0:built + 1]) >= 0)
    for s in range(first.size):
        f = int(first[s])
        if f <= built:
            assert lower[f] >= s
            assert f == m0 or lower[f - 1] < s
        else:
            assert lower[built] < s


def test_bad_alpha(sched):
    with pytest.raises(ValueError):
        BoundaryTable(1.0, sched)


@pytest.mark.parametrize("t", [4, 8, 12])
def test_stochastic_ordering_in_p(table, t):
    # conditional law of S_t is stochastically increasing in p
    ps = [0.01, 0.05, 0.1, 0.3]
    cdfs = [np.cumsum(oracle.enumerate_conditional(p, table.upper, table.lower, t)) for p in ps]
    for lo, hi in zip(cdfs, cdfs[1:]):
        assert np.all(lo >= hi - 1e-12)


def test_stochastic_ordering_dp(table):
    ps = np.linspace(0.0, 0.5, 11)[1:]
    cdfs = [np.cumsum(oracle.conditional_pmf_dp(p, table.upper, table.lower, 200)) for p in ps]
    for lo, hi in zip(cdfs, cdfs[1:]):
        assert np.all(lo >= hi - 1e-12)
