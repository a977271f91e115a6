import math

import numpy as np
import pytest
from scipy.special import betainc

from mcpower import oracle


@pytest.mark.parametrize("n, p, k, expected", [
    (10, 0.3, 0, 1.0),
    (10, 0.3, 11, 0.0),
    (10, 0.0, 1, 0.0),
    (10, 1.0, 10, 1.0),
])
def test_binom_tail_edges(n, p, k, expected):
    assert oracle.binom_tail(n, p, k) == expected


def test_binom_tail_small_value():
    # P[Bin(100, 0.05) >= 20]
    got = oracle.binom_tail(100, 0.05, 20)
    assert got == pytest.approx(betainc(20, 81, 0.05), rel=1e-10)
    assert 1e-7 < got < 2e-7


@pytest.mark.parametrize("n, p", [(1, 0.5), (25, 0.05), (400, 0.9)])
def test_binom_pmf_sums_to_one(n, p):
    assert math.fsum(oracle.binom_pmf(n, p)) == pytest.approx(1.0, abs=1e-12)


def test_absorption_p_one_and_zero(table):
    up, down, state = oracle.crossing_probs(1.0, table.upper, table.lower, 50)
    assert np.all(down == 0.0)
    assert up[1] == 0.0 and up[-1] == 1.0
    first = int(np.argmax(table.lower[1:2001] >= 0)) + 1
    assert table.lower[first] >= 0
    up, down, state = oracle.crossing_probs(0.0, table.upper, table.lower, first + 5)
    assert down[first - 1] == 0.0 and down[first] == 1.0
    assert np.all(up == 0.0)


@pytest.mark.parametrize("p", [0.02, 0.05, 0.3])
def test_mass_conserved(table, p):
    _, _, state = oracle.crossing_probs(p, table.upper, table.lower, 500)
    assert state.total == pytest.approx(1.0, abs=1e-12)


def test_enumeration_first_step(table):
    pmf = oracle.enumerate_conditional(0.05, table.upper, table.lower, 1)
    assert pmf == pytest.approx([0.95, 0.05])


@pytest.mark.parametrize("p", [0.05, 0.1, 0.4])
def test_enumeration_matches_dp(table, p):
    a = oracle.enumerate_conditional(p, table.upper, table.lower, 12)
    b = oracle.conditional_pmf_dp(p, table.upper, table.lower, 12)
    assert np.allclose(a, b, atol=1e-14)


def test_cp_bisection_example():
    lo, hi = oracle.clopper_pearson_bisect(0, 10, 0.05)
    assert lo == 0.0
    assert hi == pytest.approx(1 - 0.025 ** 0.1, abs=1e-12)
    assert oracle.clopper_pearson_bisect(0, 0, 0.05) == (0.0, 1.0)
    with pytest.raises(ValueError):
        oracle.clopper_pearson_bisect(3, 2, 0.05)


def test_explicit_union_u_zero_is_single_interval():
    lo, hi = oracle.explicit_union(3, 7, 0, 0.05, 0.0)
    assert (lo, hi) == oracle.clopper_pearson_bisect(3, 10, 0.05)


def test_cp_coverage_at_least_nominal():
    for n in (1, 5, 20):
        for p in (0.01, 0.2, 0.5):
            assert oracle.cp_coverage(n, 0.05, p) >= 0.95 - 1e-12
