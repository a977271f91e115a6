import logging
import math

import numpy as np
import pytest

from mcpower.precision import (
    DELTA0,
    DELTA1,
    DELTA2,
    DELTA3,
    Band,
    Custom,
    Fixed,
    LeftTail,
    SqrtProfile,
    parse_rule,
    scaled_rule,
)
from mcpower.verify import (
    BUILTIN_RULES,
    rule_midpoint_equivalence,
    rule_shrink_monotone,
    rule_zero_length,
)

D1_HALF = 0.02 * 0.5 / math.sqrt(0.05 * 0.95)   # 0.045883...


def test_delta0_boundary():
    assert DELTA0.admits(0.3, 0.32)
    assert not DELTA0.admits(0.3, 0.3201)


def test_delta1_reference_point():
    assert DELTA1.delta_at(0.05) == pytest.approx(0.02)
    assert DELTA1.admits(0.04, 0.06)


def test_delta1_midpoint_half():
    assert D1_HALF == pytest.approx(0.045883, abs=1e-6)
    assert DELTA1.admits(0.5 - 0.04588 / 2, 0.5 + 0.04588 / 2)
    assert not DELTA1.admits(0.5 - 0.0459 / 2, 0.5 + 0.0459 / 2)
    assert not DELTA1.admits(0.5 - 0.046 / 2, 0.5 + 0.046 / 2)


def test_delta1_vanishes_at_ends():
    assert DELTA1.delta_at(0.0) == 0.0
    assert DELTA1.delta_at(1.0) == 0.0


def test_delta2_examples():
    assert DELTA2.delta_at(0.5) == pytest.approx(0.1)
    assert DELTA2.admits(0.45, 0.55)
    assert not DELTA2.admits(0.04, 0.1)
    assert DELTA2.admits(0.04, 0.06)
    # the band is open at the edges
    assert not DELTA2.admits(0.05, 0.1)
    assert DELTA2.delta_at(0.02) == pytest.approx(0.02)


def test_delta3_examples():
    assert DELTA3.admits(0.06, 0.9)
    assert not DELTA3.admits(0.05, 0.9)
    assert DELTA3.admits(0.0, 0.02)
    assert not DELTA3.admits(0.0, 0.03)


@pytest.mark.parametrize("name", sorted(BUILTIN_RULES))
def test_builtin_rule_properties(name):
    rule = BUILTIN_RULES[name]
    for check in (rule_midpoint_equivalence, rule_shrink_monotone, rule_zero_length):
        ok, detail = check(rule)
        assert ok, f"{check.__name__}: {detail}"


def test_admits_broadcasts():
    lo = np.array([0.1, 0.2, 0.3])
    hi = np.array([0.11, 0.25, 0.3])
    assert DELTA0.admits(lo, hi).tolist() == [True, False, True]


def test_scaled_rules():
    assert scaled_rule("delta0", 2.5) == Fixed(0.05)
    assert scaled_rule("delta2", 2.5) == Band(0.25, 0.05, 0.05, 0.95)
    assert scaled_rule("d3") == DELTA3
    with pytest.raises(ValueError):
        scaled_rule("delta9")


@pytest.mark.parametrize("text, expected", [
    ("fixed:0.01", Fixed(0.01)),
    ("sqrt", SqrtProfile()),
    ("sqrt:0.04,0.1", SqrtProfile(0.04, 0.1)),
    ("band:0.1,0.02,0.05,0.95", DELTA2),
    ("lefttail:0.02,0.05", DELTA3),
    ("delta1", DELTA1),
    ("delta0:2", Fixed(0.04)),
])
def test_parse_rule(text, expected):
    assert parse_rule(text) == expected


@pytest.mark.parametrize("text", ["fixed", "fixed:a", "fixed:0.1,0.2", "wiggly:1", "custom:"])
def test_parse_rule_errors(text):
    with pytest.raises(ValueError):
        parse_rule(text)


def test_custom_rule_from_file(tmp_path):
    path = tmp_path / "rule.txt"
    path.write_text("# midpoint  length\n0 0.02\n0.5 0.1\n1 0.02\n")
    rule = parse_rule(f"custom:{path}")
    assert isinstance(rule, Custom)
    assert rule.delta_at(0.25) == pytest.approx(0.06)
    assert rule.admits(0.45, 0.55)
    assert not rule.admits(0.0, 0.05)
    ok, detail = rule_zero_length(rule)
    assert ok, detail


def test_custom_rule_warns_when_not_shrink_closed(tmp_path, caplog):
    path = tmp_path / "steep.txt"
    path.write_text("0 0\n0.5 0.9\n0.6 0\n1 0\n")
    with caplog.at_level(logging.WARNING):
        Custom.from_file(path)
    assert "not closed under taking subintervals" in caplog.text


@pytest.mark.parametrize("m, d", [((0.5, 0.2), (0.1, 0.1)), ((0.1,), (0.1, 0.2)), ((0, 1), (0.1, -0.1))])
def test_custom_rule_validation(m, d):
    with pytest.raises(ValueError):
        Custom(m, d)


def test_lefttail_attains():
    # past the cut the supremum comes from the open tail condition and is not admitted
    rule = LeftTail(0.02, 0.05)
    assert not rule.attains(0.2)
    assert rule.attains(0.0)
