"""The main loop.

``N`` streams run in lockstep against one boundary table. After every
resolution the interval ``I(R, A, |open|)`` (intersected with the pilot
interval) is recomputed, and the run stops as soon as the precision rule
admits it. At joint-test checkpoints the open streams are also tested as a
group.

Streams are advanced in blocks of steps. Each stream walks the whole block
on its own and reports its first boundary contact. The contacts are then
replayed in step order, so the stopping step, counts and effort are exactly
those of a step-by-step run. Only the partial sums of streams that were
still open when a run stopped inside a block are not kept.
"""

from __future__ import annotations

import json
import logging
import math
import pickle
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boundary import BoundaryTable, boundary_table
from .config import RunConfig
from .interval import FULL, Interval, interval_union, intersect_with_pilot, intervals_disjoint
from .joint import JointTestState, checkpoint as joint_checkpoint
from .samplers import (EXTRA_DOMAIN, MAIN_DOMAIN, NEGATIVE, OPEN, POSITIVE, Sampler, SamplerError,
                       SamplerSpec)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FIRST_BLOCK = 64
MAX_BLOCK = 1 << 18
LOG_COLUMNS = ("t", "R", "A", "unresolved", "low", "high", "effort")
JOINT_LOG_COLUMNS = ("t", "unresolved", "r", "a", "t_plus", "t_minus", "xi", "decision", "low", "high")
STATUS_NAMES = {OPEN: "unresolved", POSITIVE: "positive", NEGATIVE: "negative"}


@dataclass
class StreamState:
    stream_id: int
    partial_sum: int | None      # None when the run stopped inside a block
    steps: int
    status: str


class RunState:
    """Counts and per-stream arrays of a main run."""

    def __init__(self, n: int, seed: int):
        self.t = 0
        self.sums = np.zeros(n, dtype=np.int64)
        self.status = np.zeros(n, dtype=np.int8)
        self.tau = np.zeros(n, dtype=np.int64)
        self.R = 0
        self.A = 0
        self.tau_sum = 0            # sum of stopping steps over resolved streams
        self.current_interval = FULL
        self.rng_seed_root = int(seed)
        self.sums_at = 0            # step at which `sums` of open streams are exact

    @property
    def n(self) -> int:
        return int(self.sums.size)

    @property
    def unresolved(self) -> int:
        return self.n - self.R - self.A

    @property
    def effort(self) -> int:
        """Bits drawn so far: the sum over streams of ``min(tau_i, t)``."""
        return self.tau_sum + self.unresolved * self.t

    def open_ids(self) -> np.ndarray:
        return np.flatnonzero(self.status == OPEN)

    def stream(self, i: int) -> StreamState:
        st = int(self.status[i])
        steps = self.t if st == OPEN else int(self.tau[i])
        exact = st != OPEN or self.sums_at == self.t
        return StreamState(i, int(self.sums[i]) if exact else None, steps, STATUS_NAMES[st])

    @property
    def streams(self) -> list[StreamState]:
        return [self.stream(i) for i in range(self.n)]


# -- walking ------------------------------------------------------------------

def walk_block(streams, ids, sums, t1: int, table: BoundaryTable, pool=None):
    """Advance streams ``ids`` (partial sums ``sums``) to step ``t1`` or first contact.

    Returns ``(codes, steps, sums)`` aligned with ``ids``.
    """
    table.walk_arrays()
    codes = np.zeros(len(ids), dtype=np.int8)
    steps = np.zeros(len(ids), dtype=np.int64)
    out = np.zeros(len(ids), dtype=np.int64)

    def work(lo: int, hi: int) -> None:
        for k in range(lo, hi):
            codes[k], steps[k], out[k] = streams[ids[k]].walk(int(sums[k]), t1, table)

    if pool is None or len(ids) < 64:
        work(0, len(ids))
    else:
        n_chunks = min(len(ids), 8 * pool._max_workers)
        edges = np.linspace(0, len(ids), n_chunks + 1).astype(int)
        for fut in [pool.submit(work, a, b) for a, b in zip(edges[:-1], edges[1:])]:
            fut.result()
    return codes, steps, out


def step_all(state: RunState, table: BoundaryTable, streams, pool=None) -> RunState:
    """Advance every open stream by exactly one step."""
    t1 = state.t + 1
    table.extend_to(t1)
    ids = state.open_ids()
    codes, steps, sums = walk_block(streams, ids, state.sums[ids], t1, table, pool)
    _commit(state, ids, codes, steps, sums, t1, t1)
    return state


def _commit(state: RunState, ids, codes, steps, sums, t_stop: int, t_block: int) -> None:
    done = (codes != OPEN) & (steps <= t_stop)
    rid = ids[done]
    state.status[rid] = codes[done]
    state.tau[rid] = steps[done]
    state.sums[rid] = sums[done]
    state.R += int(np.count_nonzero(codes[done] == POSITIVE))
    state.A += int(np.count_nonzero(codes[done] == NEGATIVE))
    state.tau_sum += int(steps[done].sum())
    still = ~done
    state.sums[ids[still]] = sums[still]
    state.t = t_stop
    state.sums_at = t_stop if t_stop == t_block else -1


# -- reporting ------------------------------------------------------------------

@dataclass
class FinalReport:
    interval: Interval
    admitted: bool
    terminated_by: str          # rule | joint_test | effort_ceiling | exhausted
    R: int
    A: int
    unresolved: int
    N: int
    steps: int
    effort: int
    effort_main: int
    effort_pilot: int
    seed: int
    gamma_main: float
    epsilon: float
    pilot: dict | None = None
    planning: dict = field(default_factory=dict)
    joint_tests: list = field(default_factory=list)
    pilot_conflict: bool = False
    config: dict = field(default_factory=dict)

    @property
    def truncated(self) -> bool:
        return self.terminated_by == "effort_ceiling"

    @property
    def resolved_fraction(self) -> float | None:
        """``R / (R + A)``: a point summary over resolved streams, with no coverage guarantee."""
        done = self.R + self.A
        return self.R / done if done else None

    def as_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "interval": {"low": float(self.interval.low), "high": float(self.interval.high)},
            "length": float(self.interval.high - self.interval.low),
            "admitted": self.admitted,
            "terminated_by": self.terminated_by,
            "truncated": self.truncated,
            "R": self.R,
            "A": self.A,
            "unresolved": self.unresolved,
            "N": self.N,
            "steps": self.steps,
            "effort": self.effort,
            "effort_main": self.effort_main,
            "effort_pilot": self.effort_pilot,
            "resolved_fraction": self.resolved_fraction,
            "seed": self.seed,
            "gamma_main": self.gamma_main,
            "epsilon": self.epsilon,
            "pilot": self.pilot,
            "planning": self.planning,
            "joint_tests": self.joint_tests,
            "pilot_conflict": self.pilot_conflict,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


class CsvLog:
    """Append-only CSV with a header; floats written with ``repr`` so they round-trip."""

    def __init__(self, path, columns, append: bool = False):
        self.path = Path(path)
        self.columns = columns
        exists = append and self.path.exists()
        self._fh = open(self.path, "a" if exists else "w")
        if not exists:
            self._fh.write(",".join(columns) + "\n")

    def write_rows(self, rows) -> None:
        for row in rows:
            self._fh.write(",".join("" if v is None else repr(v) if isinstance(v, float) else str(v)
                                    for v in row) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_csv_log(path) -> list[dict]:
    """Parse a log written by :class:`CsvLog` back into typed rows."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        row = {}
        for key, raw in zip(header, line.split(",")):
            if raw == "":
                row[key] = None
            elif key in ("decision",):
                row[key] = raw
            elif key in ("low", "high", "xi"):
                row[key] = float(raw)
            else:
                row[key] = int(raw)
        rows.append(row)
    return rows


# -- the main run -----------------------------------------------------------------

class MainRun:
    """One main run over ``N`` streams; resumable from a checkpoint file."""

    def __init__(self, cfg: RunConfig, sampler: Sampler, table: BoundaryTable, n_streams: int,
                 pilot_interval: Interval = FULL, effort_pilot: int = 0):
        self.cfg = cfg
        self.sampler = sampler
        self.table = table
        self.pilot_interval = pilot_interval
        self.effort_pilot = int(effort_pilot)
        self.gamma = cfg.gamma_main
        self.epsilon = cfg.epsilon_value
        self.rule = cfg.rule
        self.state = RunState(n_streams, cfg.seed)
        self.streams = [sampler.new_stream(i, MAIN_DOMAIN) for i in range(n_streams)]
        self.joint = JointTestState(cfg.eta, cfg.joint_schedule(), cfg.joint_prefer) if cfg.joint_test else None
        self.block = FIRST_BLOCK
        self.pilot_conflict = False
        self.terminated_by = None
        self.extra = {}               # pilot / planning info carried into the report
        self._log = None
        self._joint_log = None
        self._last_save = -math.inf

    # interval over the current counts, pilot applied
    def interval(self, R, A, u, warn=False) -> Interval:
        return intersect_with_pilot(interval_union(R, A, u, self.gamma, self.epsilon), self.pilot_interval, warn=warn)

    def _open_logs(self, append: bool) -> None:
        if self.cfg.log_path:
            self._log = CsvLog(self.cfg.log_path, LOG_COLUMNS, append)
            if self.joint is not None:
                self._joint_log = CsvLog(joint_log_path(self.cfg.log_path), JOINT_LOG_COLUMNS, append)

    def _close_logs(self) -> None:
        for lg in (self._log, self._joint_log):
            if lg is not None:
                lg.close()

    def run(self, resume: bool = False) -> FinalReport:
        st = self.state
        self._open_logs(resume)
        pool = ThreadPoolExecutor(self.cfg.workers) if self.cfg.workers > 1 else None
        try:
            if not resume:
                st.current_interval = self.interval(st.R, st.A, st.unresolved)
                if self._log:
                    self._log.write_rows([(0, 0, 0, st.n, float(st.current_interval.low),
                                           float(st.current_interval.high), 0)])
                if self.rule.admits_interval(st.current_interval):
                    self.terminated_by = "rule"
            while self.terminated_by is None:
                self._maybe_save()
                self._advance(pool)
            # the final state lets a truncated run continue under a larger ceiling
            if self.cfg.checkpoint_path and self.sampler.resumable:
                self.save(self.cfg.checkpoint_path)
        except SamplerError:
            if self.cfg.checkpoint_path and self.sampler.resumable:
                self.save(self.cfg.checkpoint_path)
                log.error("sampler failed; state saved to %s", self.cfg.checkpoint_path)
            raise
        finally:
            if pool is not None:
                pool.shutdown()
            self._close_logs()
        return self.report()

    def _advance(self, pool) -> None:
        st = self.state
        u = st.unresolved
        if u == 0:
            self.terminated_by = "exhausted"
            return
        room = int((self.cfg.max_effort - self.effort_pilot - st.effort) // u)
        if room < 1:
            self.terminated_by = "effort_ceiling"
            return
        t0 = st.t
        t1 = t0 + min(self.block, room)
        at_checkpoint = False
        if self.joint is not None:
            cp = self.joint.next_checkpoint(t0)
            if cp <= t1:
                t1, at_checkpoint = cp, True
                self.table.retain([cp])
        self.block = min(2 * self.block, MAX_BLOCK)
        self.table.extend_to(t1)

        ids = st.open_ids()
        codes, steps, sums = walk_block(self.streams, ids, st.sums[ids], t1, self.table, pool)
        t_stop, rows = self._replay(ids, codes, steps, t1)
        _commit(st, ids, codes, steps, sums, t_stop, t1)
        if self._log and rows:
            self._log.write_rows(rows)
        if self.terminated_by is None and at_checkpoint and st.unresolved > 0:
            self._joint_test()

    def _replay(self, ids, codes, steps, t1):
        """Find the first resolution step in the block at which the rule admits the interval."""
        st = self.state
        hit = np.flatnonzero(codes != OPEN)
        if hit.size == 0:
            return t1, []
        order = hit[np.lexsort((ids[hit], steps[hit]))]
        times = steps[order]
        pos = (codes[order] == POSITIVE).astype(np.int64)
        ends = np.append(np.flatnonzero(np.diff(times)), times.size - 1)
        cum_pos = np.cumsum(pos)[ends]
        cum_all = ends + 1
        R = st.R + cum_pos
        A = st.A + (cum_all - cum_pos)
        u = st.n - R - A
        tg = times[ends]
        effort = st.tau_sum + np.cumsum(times)[ends] + u * tg
        iv = interval_union(R, A, u, self.gamma, self.epsilon)
        iv = intersect_with_pilot(Interval(np.atleast_1d(iv.low), np.atleast_1d(iv.high)),
                                  self.pilot_interval, warn=False)
        lows, highs = np.atleast_1d(iv.low), np.atleast_1d(iv.high)
        ok = np.flatnonzero(self.rule.admits(lows, highs))
        last = int(ok[0]) if ok.size else tg.size - 1
        rows = [(int(tg[k]), int(R[k]), int(A[k]), int(u[k]), float(lows[k]), float(highs[k]),
                 int(effort[k]) + self.effort_pilot) for k in range(last + 1)]
        st.current_interval = Interval(float(lows[last]), float(highs[last]))
        if ok.size:
            self.terminated_by = "rule"
            self._check_conflict(int(R[last]), int(A[last]), int(u[last]))
            return int(tg[last]), rows
        if u[-1] == 0:
            # nothing left to walk past the last resolution
            return int(tg[-1]), rows
        return t1, rows

    def _check_conflict(self, R, A, u) -> None:
        raw = interval_union(R, A, u, self.gamma, self.epsilon)
        if bool(intervals_disjoint(raw, self.pilot_interval)):
            self.pilot_conflict = True
            log.warning("main-run interval %s does not meet the pilot interval %s", raw, self.pilot_interval)

    def _joint_test(self) -> None:
        st = self.state
        if self.rule.admits_interval(st.current_interval):
            return
        open_sums = st.sums[st.open_ids()]
        rec, adjusted = joint_checkpoint(self.joint, st.t, st.R, st.A, open_sums, self.table, self.rule,
                                         self.gamma, self.epsilon, self.pilot_interval)
        if self._joint_log:
            self._joint_log.write_rows([tuple(rec.as_dict()[c] for c in JOINT_LOG_COLUMNS)])
        if adjusted is not None and self.rule.admits_interval(adjusted):
            st.current_interval = Interval(float(adjusted.low), float(adjusted.high))
            self.terminated_by = "joint_test"
            if self._log:
                self._log.write_rows([(st.t, st.R, st.A, st.unresolved, st.current_interval.low,
                                       st.current_interval.high, st.effort + self.effort_pilot)])

    def report(self) -> FinalReport:
        st = self.state
        return FinalReport(
            interval=st.current_interval,
            admitted=self.terminated_by in ("rule", "joint_test"),
            terminated_by=self.terminated_by,
            R=st.R, A=st.A, unresolved=st.unresolved, N=st.n, steps=st.t,
            effort=st.effort + self.effort_pilot, effort_main=st.effort, effort_pilot=self.effort_pilot,
            seed=self.cfg.seed, gamma_main=self.gamma, epsilon=self.epsilon,
            pilot=self.extra.get("pilot"), planning=self.extra.get("planning", {}),
            joint_tests=[rec.as_dict() for rec in self.joint.history] if self.joint else [],
            pilot_conflict=self.pilot_conflict, config=self.cfg.summary(),
        )

    # -- checkpoints ------------------------------------------------------------

    def _maybe_save(self) -> None:
        path = self.cfg.checkpoint_path
        if not path:
            return
        if not self.sampler.resumable:
            if self._last_save == -math.inf:
                log.warning("external samplers cannot be checkpointed; running without checkpoints")
                self._last_save = math.inf
            return
        now = time.monotonic()
        if now - self._last_save >= self.cfg.checkpoint_every:
            self.save(path)
            self._last_save = now

    def save(self, path) -> None:
        st = self.state
        ids = st.open_ids()
        payload = {
            "schema_version": SCHEMA_VERSION,
            "config": self.cfg,
            "state": {k: getattr(st, k) for k in ("t", "sums", "status", "tau", "R", "A", "tau_sum",
                                                  "current_interval", "rng_seed_root", "sums_at")},
            "streams": {int(i): self.streams[i].state() for i in ids},
            "pilot_interval": tuple(self.pilot_interval),
            "effort_pilot": self.effort_pilot,
            "joint_history": self.joint.history if self.joint else None,
            "block": self.block,
            "extra": self.extra,
        }
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(payload, fh)
        tmp.replace(path)

    @classmethod
    def load(cls, path, sampler: Sampler | None = None, **overrides) -> "MainRun":
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {payload.get('schema_version')}")
        cfg = payload["config"]
        for k, v in overrides.items():
            setattr(cfg, k, v)
        if sampler is None:
            sampler = Sampler(cfg.sampler, cfg.seed)
        table = boundary_table(cfg.alpha, cfg.spending())
        n = payload["state"]["sums"].size
        run = cls(cfg, sampler, table, n, Interval(*payload["pilot_interval"]), payload["effort_pilot"])
        for k, v in payload["state"].items():
            setattr(run.state, k, v)
        for i, s in payload["streams"].items():
            run.streams[i].restore(s)
        if run.joint is not None:
            run.joint.history = payload["joint_history"]
        run.block = payload["block"]
        run.extra = payload["extra"]
        return run


def joint_log_path(log_path) -> Path:
    p = Path(log_path)
    return p.with_name(p.stem + ".joint" + (p.suffix or ".csv"))


# -- orchestration ------------------------------------------------------------------

def plan_and_prepare(cfg: RunConfig, sampler: Sampler, table: BoundaryTable):
    """Pilot plus choice of ``N``. Returns ``(N, pilot summary or None, planning dict)``."""
    from .pilot import estimate_n_opt, n_blind_rule, n_pilot, run_pilot

    pilot = run_pilot(cfg, sampler, table) if cfg.use_pilot else None
    pilot_iv = pilot.interval if pilot else FULL
    planning = {}
    if cfg.n_streams is not None:
        planning["chosen"] = "fixed"
        return cfg.n_streams, pilot, planning
    eps, gamma = cfg.epsilon_value, cfg.gamma_main
    nb = n_blind_rule(cfg.rule, gamma, eps)
    planning["n_blind"] = nb
    if cfg.plan == "blind":
        planning["chosen"] = "blind"
        return nb, pilot, planning
    npil = n_pilot(pilot_iv, cfg.rule, gamma, eps)
    planning["n_pilot"] = npil
    if cfg.plan == "pilot":
        planning["chosen"] = "pilot"
        return npil, pilot, planning
    nopt, grid = estimate_n_opt(pilot, npil, max(npil, int(cfg.nopt_hi_factor * nb)), cfg)
    planning["n_opt"] = nopt
    planning["n_opt_grid"] = grid
    planning["chosen"] = "opt"
    return nopt, pilot, planning


def run(cfg: RunConfig, sampler: Sampler | None = None) -> FinalReport:
    """Pilot, planning and main run for one configuration."""
    cfg.validate()
    own = sampler is None
    if own:
        sampler = Sampler(cfg.sampler, cfg.seed)
    try:
        table = boundary_table(cfg.alpha, cfg.spending())
        n, pilot, planning = plan_and_prepare(cfg, sampler, table)
        main = MainRun(cfg, sampler, table, n, pilot.interval if pilot else FULL,
                       pilot.effort if pilot else 0)
        main.extra = {"pilot": pilot.as_dict() if pilot else None, "planning": planning}
        report = main.run()
    finally:
        if own:
            sampler.close()
    if cfg.report_path:
        Path(cfg.report_path).write_text(report.to_json())
    return report


def resume(path, **overrides) -> FinalReport:
    """Continue a main run from a checkpoint file."""
    main = MainRun.load(path, **overrides)
    try:
        report = main.run(resume=True)
    finally:
        main.sampler.close()
    if main.cfg.report_path:
        Path(main.cfg.report_path).write_text(report.to_json())
    return report


def naive_estimate(n: int, m: int, sampler: SamplerSpec | Sampler, alpha: float = 0.05, seed: int = 0) -> float:
    """Share of ``n`` streams whose empirical p-value over ``m`` bits is at most ``alpha``.

    For benchmarking only: the bias of this estimator cannot be bounded.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be at least 1")
    own = isinstance(sampler, SamplerSpec)
    smp = Sampler(sampler, seed) if own else sampler
    try:
        hits = 0
        for i in range(n):
            hits += int(smp.new_stream(i, EXTRA_DOMAIN).bits(m).sum() / m <= alpha)
    finally:
        if own:
            smp.close()
    return hits / n
