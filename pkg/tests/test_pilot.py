import logging
import time

import numpy as np
import pytest

from mcpower.boundary import boundary_table
from mcpower.config import RunConfig, replace
from mcpower.interval import FULL, Interval
from mcpower.pilot import (
    _TailTables,
    balanced_length,
    emulate_effort,
    estimate_n_opt,
    n_blind,
    n_blind_rule,
    n_pilot,
    run_pilot,
    stops_by_two,
    summarize_pilot,
    tail_quantile,
    tail_survival,
)
from mcpower.precision import DELTA1, DELTA3, Fixed
from mcpower.samplers import NEGATIVE, OPEN, POSITIVE, Sampler, SamplerSpec


def test_n_blind_reference_value():
    t0 = time.perf_counter()
    assert n_blind(0.01, 0.01, 1e-4) == 68311
    assert time.perf_counter() - t0 < 5.0


@pytest.mark.parametrize("delta, gamma, eps", [(0.02, 0.01, 1e-4), (0.05, 0.1, 2.5e-4), (0.1, 0.05, 0.0)])
def test_n_blind_is_minimal(delta, gamma, eps):
    n = n_blind(delta, gamma, eps)
    assert balanced_length(n, gamma, eps) <= delta < balanced_length(n - 1, gamma, eps)


def test_n_blind_trivial():
    assert n_blind(1.0, 0.05, 1e-4) == 1
    with pytest.raises(ValueError):
        n_blind(0.0, 0.05, 1e-4)


def test_n_pilot_without_pilot_is_n_blind():
    assert n_pilot(FULL, Fixed(0.02), 0.01, 1e-4) == n_blind(0.02, 0.01, 1e-4)
    assert n_blind_rule(Fixed(0.02), 0.01, 1e-4) == n_blind(0.02, 0.01, 1e-4)


def test_n_pilot_edge_interval_saves_streams():
    full = n_blind(0.02, 0.01, 1e-4)
    edge = n_pilot(Interval(0.0, 0.06), Fixed(0.02), 0.01, 1e-4)
    assert edge < 0.5 * full
    assert stops_by_two(edge, Fixed(0.02), 0.01, 1e-4, Interval(0.0, 0.06))
    assert not stops_by_two(edge - 1, Fixed(0.02), 0.01, 1e-4, Interval(0.0, 0.06))


def test_n_pilot_monotone_in_pilot_interval():
    rule, gamma, eps = Fixed(0.02), 0.01, 1e-4
    outer = n_pilot(Interval(0.3, 0.8), rule, gamma, eps)
    inner = n_pilot(Interval(0.4, 0.7), rule, gamma, eps)
    assert inner <= outer <= n_blind(0.02, gamma, eps)


def test_adaptive_rules_need_fewer_streams_than_their_tightest_length():
    # every split with its low end past the cut is admitted under the left-tail rule
    n = n_blind_rule(DELTA3, 0.01, 1e-4)
    assert n < n_blind(0.02, 0.01, 1e-4)
    assert stops_by_two(n, DELTA3, 0.01, 1e-4) and not stops_by_two(n - 1, DELTA3, 0.01, 1e-4)
    assert n_pilot(Interval(0.6, 0.8), DELTA1, 0.01, 1e-4) < n_blind(0.02, 0.01, 1e-4)


def test_tail_model():
    assert tail_survival(1000, 1000) == pytest.approx(1.0)
    t = np.array([1500.0, 1e4, 1e6])
    s = tail_survival(t, 1000)
    assert np.all(np.diff(s) < 0) and np.all(s < 1)
    assert np.allclose(tail_quantile(s, 1000), t, rtol=1e-9)


def test_tail_tables_match_quantile():
    # linear interpolation in the tables stays close to the exact inverse
    tables = _TailTables(1000.0)
    cells = tables.direct.size - 1
    c = np.linspace(1.0 / 256, 1.0, 997)
    grid = np.arange(cells + 1) / cells
    grid[0] = 1.0 / 256
    assert np.allclose(np.interp(c, grid, tables.direct), tail_quantile(c, 1000.0), rtol=1e-4)
    small = np.geomspace(1e-12, 1.0 / 256, 50)
    y = tables.y0 - 2.0 * np.log(small)
    y_grid = tables.y0 + np.arange(tables.log_t.size) / 64.0
    approx = np.exp(np.interp(y, y_grid, tables.log_t))
    assert np.allclose(approx, tail_quantile(small, 1000.0), rtol=1e-3)


def test_summarize_pilot_counts():
    codes = np.array([POSITIVE, NEGATIVE, NEGATIVE, OPEN, POSITIVE])
    steps = np.array([10, 3, 7, 50, 20])
    s = summarize_pilot(codes, steps, 50, 0.001, 1e-4)
    assert (s.R, s.A, s.unresolved, s.n) == (2, 2, 1, 5)
    assert s.effort == 10 + 3 + 7 + 50 + 20
    assert s.beta_hat == pytest.approx(2.5 / 5)
    assert s.survival_at_tmax == pytest.approx(0.2)
    assert s.resolved_times.tolist() == [3, 7, 10, 20]


@pytest.mark.parametrize("p, side", [(1.0, "low"), (0.0, "high")])
def test_run_pilot_degenerate(p, side):
    cfg = RunConfig(sampler=SamplerSpec.fixed(p), pilot_n=100, pilot_tmax=1000, gamma=0.05, epsilon=1e-3)
    table = boundary_table(cfg.alpha, cfg.spending())
    with Sampler(cfg.sampler, cfg.seed) as smp:
        s = run_pilot(cfg, smp, table)
    assert s.unresolved == 0
    if side == "low":
        assert s.A == 100 and s.interval.low == 0.0 and s.interval.high < 0.1
    else:
        assert s.R == 100 and s.interval.high == 1.0 and s.interval.low > 0.9


def test_run_pilot_high_power():
    cfg = RunConfig(sampler=SamplerSpec.beta(89.78), pilot_n=300, gamma=0.05, epsilon=1e-3, seed=4)
    table = boundary_table(cfg.alpha, cfg.spending())
    with Sampler(cfg.sampler, cfg.seed) as smp:
        s = run_pilot(cfg, smp, table)
    assert s.interval.low > 0.5
    assert s.interval.contains(0.99)


def test_emulation_deterministic_and_positive():
    pilot = summarize_pilot(np.array([POSITIVE] * 30 + [NEGATIVE] * 60 + [OPEN] * 10),
                            np.array(list(range(1, 91)) + [1000] * 10), 1000, 0.001, 1e-4)
    a = emulate_effort(2000, pilot, Fixed(0.05), 0.01, 1e-4, 50, np.random.default_rng(1))
    b = emulate_effort(2000, pilot, Fixed(0.05), 0.01, 1e-4, 50, np.random.default_rng(1))
    assert np.array_equal(a, b)
    assert np.all(a > 0)


def test_n_opt_grid(small_cfg):
    cfg = replace(small_cfg, sampler=SamplerSpec.beta(1.0))
    table = boundary_table(cfg.alpha, cfg.spending())
    with Sampler(cfg.sampler, cfg.seed) as smp:
        pilot = run_pilot(cfg, smp, table)
    lo = n_pilot(pilot.interval, cfg.rule, cfg.gamma_main, cfg.epsilon_value)
    n, grid = estimate_n_opt(pilot, lo, 4 * lo, cfg)
    assert lo <= n <= 4 * lo
    assert n in [row["N"] for row in grid]
    assert min(grid, key=lambda row: row["mean_effort"])["N"] == n


def test_n_opt_without_survivors(small_cfg, caplog):
    pilot = summarize_pilot(np.array([POSITIVE, NEGATIVE] * 50), np.arange(100) + 1, 1000, 0.001, 1e-4)
    with caplog.at_level(logging.WARNING):
        n, grid = estimate_n_opt(pilot, 321, 999, small_cfg)
    assert (n, grid) == (321, [])
    assert "every pilot stream resolved" in caplog.text
    assert estimate_n_opt(None, 55, 99, small_cfg) == (55, [])


def test_gamma_shares_validated():
    from mcpower.config import ConfigError
    with pytest.raises(ConfigError, match="must stay below gamma"):
        RunConfig(gamma=0.01, gamma_pilot=0.006, gamma_joint=0.005).validate()
