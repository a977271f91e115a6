import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcpower import oracle
from mcpower.interval import (
    FULL,
    Interval,
    clopper_pearson,
    interval_infty,
    interval_union,
    intersect_with_pilot,
)
from mcpower.verify import cp_against_bisection, cp_coverage, hull_equals_union, nesting


def test_cp_examples():
    iv = clopper_pearson(0, 10, 0.05)
    assert iv.low == 0.0
    assert iv.high == pytest.approx(0.30850, abs=5e-6)
    iv = clopper_pearson(10, 10, 0.05)
    assert iv.high == 1.0
    assert iv.low == pytest.approx(0.025 ** 0.1, rel=1e-12)
    assert tuple(clopper_pearson(0, 0, 0.05)) == (0.0, 1.0)


@pytest.mark.parametrize("r, n, gamma", [(-1, 5, 0.05), (6, 5, 0.05), (2, 5, 0.0), (2, 5, 1.0)])
def test_cp_errors(r, n, gamma):
    with pytest.raises(ValueError):
        clopper_pearson(r, n, gamma)


def test_cp_vectorized_matches_scalar():
    iv = clopper_pearson(np.arange(21), 20, 0.01)
    for r in range(21):
        one = clopper_pearson(r, 20, 0.01)
        assert iv.low[r] == one.low and iv.high[r] == one.high


def test_cp_matches_bisection():
    ok, detail = cp_against_bisection(30, 0.05)
    assert ok, detail


def test_cp_exact_coverage():
    ok, detail = cp_coverage(20, (0.01, 0.05), 51)
    assert ok, detail


def test_interval_infty_without_epsilon_is_cp():
    assert tuple(interval_infty(4, 6, 0.05, 0.0)) == tuple(clopper_pearson(4, 10, 0.05))


def test_interval_infty_widening():
    lo, hi = oracle.clopper_pearson_bisect(5, 10, 0.05)
    assert lo == pytest.approx(0.18709, abs=5e-6) and hi == pytest.approx(0.81291, abs=5e-6)
    iv = interval_infty(5, 5, 0.05, 1e-4)
    assert iv.low == pytest.approx((lo - 1e-4) / (1 - 1e-4), abs=1e-11)
    assert iv.high == pytest.approx(hi / (1 - 1e-4), abs=1e-11)
    # clipping at the ends
    assert interval_infty(0, 10, 0.05, 1e-4).low == 0.0
    assert interval_infty(10, 0, 0.05, 1e-4).high == 1.0


def test_union_examples():
    assert tuple(interval_union(3, 4, 0, 0.05, 1e-4)) == tuple(interval_infty(3, 4, 0.05, 1e-4))
    assert tuple(interval_union(0, 0, 25, 0.05, 1e-4)) == (0.0, 1.0)
    lo, hi = oracle.explicit_union(3, 5, 2, 0.01, 1e-4)
    iv = interval_union(3, 5, 2, 0.01, 1e-4)
    assert iv.low == pytest.approx(lo, abs=1e-12) and iv.high == pytest.approx(hi, abs=1e-12)


def test_union_errors():
    with pytest.raises(ValueError):
        interval_union(-1, 0, 0, 0.05, 0.0)
    with pytest.raises(ValueError):
        interval_union(1, 1, 1, 0.05, 1.0)


def test_hull_equals_union_small():
    ok, detail = hull_equals_union(total=12)
    assert ok, detail


def test_nesting_small():
    ok, detail = nesting(total=12)
    assert ok, detail


@given(st.integers(0, 2000), st.integers(0, 2000), st.integers(1, 2000),
       st.sampled_from([0.01, 0.05, 0.1]), st.sampled_from([0.0, 1e-4, 1e-2]))
def test_resolving_one_stream_never_widens(r, a, u, gamma, eps):
    outer = interval_union(r, a, u, gamma, eps)
    for inner in (interval_union(r + 1, a, u - 1, gamma, eps), interval_union(r, a + 1, u - 1, gamma, eps)):
        assert outer.contains_interval(inner)


@given(st.integers(0, 300), st.integers(0, 300), st.integers(0, 40), st.sampled_from([0.01, 0.05]))
def test_hull_formula_property(r, a, u, gamma):
    lo, hi = oracle.explicit_union(r, a, u, gamma, 1e-4, cp=lambda k, n, g: tuple(clopper_pearson(k, n, g)))
    iv = interval_union(r, a, u, gamma, 1e-4)
    assert (iv.low, iv.high) == (lo, hi)


def test_intersection_examples():
    iv = intersect_with_pilot(Interval(0.2, 0.6), Interval(0.4, 0.9))
    assert tuple(iv) == (0.4, 0.6)
    assert tuple(intersect_with_pilot(Interval(0.2, 0.6), FULL)) == (0.2, 0.6)


def test_disjoint_intersection_is_flagged(caplog):
    with caplog.at_level(logging.WARNING):
        iv = intersect_with_pilot(Interval(0.1, 0.2), Interval(0.5, 0.9))
    assert iv.length == 0.0
    assert iv.low == 0.5
    assert "does not meet" in caplog.text
    caplog.clear()
    iv = intersect_with_pilot(Interval(0.95, 0.99), Interval(0.5, 0.9), warn=False)
    assert tuple(iv) == (0.9, 0.9)
    assert caplog.text == ""


def test_interval_helpers():
    iv = Interval(0.25, 0.75)
    assert iv.length == 0.5 and iv.midpoint == 0.5
    assert iv.contains(0.25) and not iv.contains(0.8)
    assert FULL.contains_interval(iv) and not iv.contains_interval(FULL)
