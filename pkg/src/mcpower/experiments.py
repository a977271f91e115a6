"""Replicated runs behind ``mcpower tables`` and ``mcpower perm-example``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, replace
from .engine import run
from .interval import clopper_pearson
from .precision import scaled_rule
from .samplers import SamplerSpec, beta_parameter_for_power, permutation_power_exact

BETAS = (0.05, 0.7, 0.9, 0.99)
TABLE1_VARIANTS = ("min_n", "no_test", "with_test")
TABLE2_VARIANTS = ("delta0", "delta1", "delta2", "delta3")


def variant_config(which: str, variant: str, beta: float, scale: float = 1.0, base: RunConfig | None = None,
                   alpha: float = 0.05) -> RunConfig:
    """Configuration of one table cell; lengths are multiplied by ``scale``.

    table1 rows: ``min_n`` (N_Blind, no pilot, no joint test), ``no_test``
    (pilot and planned N) and ``with_test`` (pilot, planned N, joint test).
    table2 rows are the rules ``delta0`` .. ``delta3`` with every other
    setting at its default.
    """
    base = base or RunConfig(gamma=0.01)
    sampler = SamplerSpec.beta(beta_parameter_for_power(alpha, beta))
    if which == "table1":
        common = dict(alpha=alpha, rule=scaled_rule("delta0", scale), sampler=sampler)
        if variant == "min_n":
            return replace(base, use_pilot=False, joint_test=False, plan="blind", **common)
        if variant == "no_test":
            return replace(base, use_pilot=True, joint_test=False, **common)
        if variant == "with_test":
            return replace(base, use_pilot=True, joint_test=True, **common)
        raise ValueError(f"table1 has rows {', '.join(TABLE1_VARIANTS)}; got {variant!r}")
    if which == "table2":
        if variant not in TABLE2_VARIANTS:
            raise ValueError(f"table2 has rows {', '.join(TABLE2_VARIANTS)}; got {variant!r}")
        return replace(base, alpha=alpha, rule=scaled_rule(variant, scale), sampler=sampler)
    raise ValueError(f"unknown table {which!r}")


@dataclass
class CellResult:
    table: str
    variant: str
    beta: float
    runs: int
    mean_effort: float
    se_effort: float
    coverage: float
    admitted: int
    mean_n: float

    def row(self) -> dict:
        return {
            "table": self.table, "variant": self.variant, "beta": self.beta, "runs": self.runs,
            "mean_effort_millions": self.mean_effort / 1e6, "se_millions": self.se_effort / 1e6,
            "coverage": self.coverage, "admitted": self.admitted, "mean_N": self.mean_n,
        }


def run_cell(cfg: RunConfig, runs: int, beta: float, seed0: int = 0, label=("", "")) -> CellResult:
    """``runs`` replicates of ``cfg`` with seeds ``seed0 .. seed0 + runs - 1``."""
    efforts, covered, admitted, ns = [], 0, 0, []
    for k in range(runs):
        rep = run(replace(cfg, seed=seed0 + k))
        efforts.append(rep.effort)
        covered += rep.interval.low <= beta <= rep.interval.high
        admitted += rep.admitted
        ns.append(rep.N)
    eff = np.asarray(efforts, dtype=float)
    se = float(eff.std(ddof=1) / math.sqrt(runs)) if runs > 1 else 0.0
    return CellResult(label[0], label[1], beta, runs, float(eff.mean()), se, covered / runs, admitted,
                      float(np.mean(ns)))


@dataclass
class PermRow:
    effect: float
    truth: float
    truth_low: float
    truth_high: float
    low: float
    high: float
    effort: int
    admitted: bool

    def row(self) -> dict:
        return dict(self.__dict__)


def perm_example(effects, base: RunConfig, truth_datasets: int = 100_000, seed: int = 0,
                 K: int = 4, L: int = 8) -> list[PermRow]:
    """Permutation-test power: exact-enumeration truth next to one sequential run per effect."""
    rows = []
    for effect in effects:
        truth, p = permutation_power_exact(effect, truth_datasets, seed, K, L, base.alpha)
        hits = int(np.sum(p <= base.alpha))
        ref = clopper_pearson(hits, p.size, 0.01)
        rep = run(replace(base, sampler=SamplerSpec.permutation(K, L, effect), seed=seed))
        rows.append(PermRow(effect, truth, float(ref.low), float(ref.high), float(rep.interval.low),
                            float(rep.interval.high), rep.effort, rep.admitted))
    return rows
