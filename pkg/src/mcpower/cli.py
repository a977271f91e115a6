"""``mcpower`` command line.

Exit codes: 0 the precision rule admitted the interval (or the command
succeeded), 1 a ``verify`` check failed, 2 usage or configuration error,
3 the run stopped without admission (effort ceiling or no streams left),
4 the sampler failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time

from . import __version__
from .boundary import boundary_table, hoeffding_envelope
from .config import ConfigError, RunConfig, default_seed, read_config_file
from .engine import plan_and_prepare, resume, run
from .experiments import BETAS, TABLE1_VARIANTS, TABLE2_VARIANTS, perm_example, run_cell, variant_config
from .precision import Fixed, parse_rule
from .samplers import Sampler, SamplerError, parse_sampler
from .spending import SpendingSchedule

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NOT_ADMITTED, EXIT_SAMPLER = 0, 1, 2, 3, 4

log = logging.getLogger("mcpower")


def _bool(text: str) -> bool:
    value = text.lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# flag, RunConfig field, type, help
_CONFIG_FLAGS = [
    ("--alpha", "alpha", float, "test level (default 0.05)"),
    ("--delta", "rule", lambda v: Fixed(float(v)), "fixed maximum interval length (default 0.02)"),
    ("--rule", "rule", parse_rule, "fixed:D | sqrt[:D,M] | band:O,I,L,R | lefttail:D,C | delta0..delta3[:scale] | custom:PATH"),
    ("--gamma", "gamma", float, "1 - coverage (default 0.01)"),
    ("--epsilon", "epsilon", float, "per-stream error bound (default: rule length / 200)"),
    ("--spending-halflife", "spending_halflife", int, "step at which half of epsilon is spent (default 1000)"),
    ("--pilot", "use_pilot", _bool, "run the pilot sample (default yes)"),
    ("--pilot-n", "pilot_n", int, "pilot streams (default 1000)"),
    ("--pilot-tmax", "pilot_tmax", int, "pilot step cap (default 1000)"),
    ("--gamma-pilot", "gamma_pilot", float, "pilot share of gamma (default gamma/10)"),
    ("--joint-test", "joint_test", _bool, "test the open streams jointly at checkpoints (default yes)"),
    ("--gamma-joint", "gamma_joint", float, "joint-test share of gamma (default gamma/10)"),
    ("--eta", "eta", float, "joint-test tail level (default 0.05)"),
    ("--joint-stride", "joint_stride", int, "steps between joint-test checkpoints (default 200000)"),
    ("--joint-prefer", "joint_prefer", str, "side given an odd extra resolution: pilot | positive | negative"),
    ("--sampler", "sampler", parse_sampler, "beta:x=X | beta:power=B | fixed:p=P | perm:K=4,L=8,effect=1.0 | ext:cmd=\"...\""),
    ("--seed", "seed", int, "root seed (default $MCPOWER_SEED or 0)"),
    ("--workers", "workers", int, "threads advancing streams (default 1)"),
    ("--max-effort", "max_effort", float, "stop after this many bits (default 1e10)"),
    ("-N", "n_streams", int, "use exactly this many streams, skipping the planner"),
    ("--plan", "plan", str, "how to choose N: opt | pilot | blind (default opt)"),
    ("--nopt-grid", "nopt_grid", int, "grid points for the effort-optimal N (default 25)"),
    ("--nopt-reps", "nopt_reps", int, "emulation replicates per grid point (default 200)"),
    ("--log", "log_path", str, "CSV log of resolutions (joint tests go to <stem>.joint.csv)"),
    ("--report", "report_path", str, "write the final report as JSON"),
    ("--checkpoint", "checkpoint_path", str, "checkpoint file for --resume"),
    ("--checkpoint-every", "checkpoint_every", float, "seconds between checkpoints (default 60)"),
]


def _checked(conv):
    # argparse reports ArgumentTypeError messages verbatim
    def wrapped(text):
        try:
            return conv(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return wrapped


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    for flag, field, conv, text in _CONFIG_FLAGS:
        p.add_argument(flag, dest=f"cfg_{field}_{flag.lstrip('-').replace('-', '_')}", type=_checked(conv),
                       default=None, help=text, metavar=flag.lstrip("-").upper().replace("-", "_"))


def build_config(args) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    kw = read_config_file(args.config) if getattr(args, "config", None) else {}
    given = {}
    for flag, field, _, _ in _CONFIG_FLAGS:
        value = getattr(args, f"cfg_{field}_{flag.lstrip('-').replace('-', '_')}", None)
        if value is None:
            continue
        if field in given:
            raise ConfigError(f"{given[field]} and {flag} both set the {field}; pass only one")
        given[field] = flag
        kw[field] = value
    if "seed" not in kw:
        kw["seed"] = default_seed()
    try:
        return RunConfig(**kw).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# -- subcommands ----------------------------------------------------------------------

def _fmt_int(n) -> str:
    return f"{int(n):,}"


def print_summary(rep, wall: float, out=None) -> None:
    out = out or sys.stdout
    iv = rep.interval
    how = {"rule": "admitted by the precision rule", "joint_test": "admitted after a joint test",
           "effort_ceiling": "NOT admitted: effort ceiling reached",
           "exhausted": "NOT admitted: every stream resolved"}[rep.terminated_by]
    print(f"interval       [{iv.low:.6f}, {iv.high:.6f}]  length {iv.high - iv.low:.6f}  ({how})", file=out)
    frac = rep.resolved_fraction
    if frac is not None:
        print(f"point summary  R/(R+A) = {frac:.6f} over {_fmt_int(rep.R + rep.A)} resolved streams "
              "(no coverage guarantee)", file=out)
    plan = rep.planning
    parts = [f"{k.split('_', 1)[1]} {_fmt_int(plan[k])}" for k in ("n_blind", "n_pilot", "n_opt") if k in plan]
    extra = f" (plan {plan.get('chosen')}{'; ' + ', '.join(parts) if parts else ''})" if plan else ""
    print(f"streams        N = {_fmt_int(rep.N)}{extra}; R = {rep.R}, A = {rep.A}, open = {rep.unresolved}",
          file=out)
    print(f"effort         {_fmt_int(rep.effort)} bits (pilot {_fmt_int(rep.effort_pilot)}), "
          f"{_fmt_int(rep.steps)} steps", file=out)
    print(f"wall time      {wall:.2f} s", file=out)


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    if args.resume:
        overrides = {}
        if args.cfg_workers_workers is not None:
            overrides["workers"] = args.cfg_workers_workers
        if args.cfg_report_path_report is not None:
            overrides["report_path"] = args.cfg_report_path_report
        if args.cfg_max_effort_max_effort is not None:
            overrides["max_effort"] = args.cfg_max_effort_max_effort
        rep = resume(args.resume, **overrides)
    else:
        rep = run(build_config(args))
    if args.json:
        sys.stdout.write(rep.to_json())
    else:
        print_summary(rep, time.perf_counter() - t0)
    return EXIT_OK if rep.admitted else EXIT_NOT_ADMITTED


def cmd_plan(args) -> int:
    cfg = build_config(args)
    table = boundary_table(cfg.alpha, cfg.spending())
    with Sampler(cfg.sampler, cfg.seed) as sampler:
        n, pilot, planning = plan_and_prepare(cfg, sampler, table)
    result = {"N": n, "planning": planning, "pilot": pilot.as_dict() if pilot else None}
    if args.json:
        print(json.dumps(result, indent=2, sort_keys=True))
        return EXIT_OK
    if pilot is not None:
        print(f"pilot interval [{pilot.interval.low:.6f}, {pilot.interval.high:.6f}]  "
              f"R={pilot.R} A={pilot.A} open={pilot.unresolved}  effort {_fmt_int(pilot.effort)}")
    for key, label in (("n_blind", "N_Blind"), ("n_pilot", "N_Pilot"), ("n_opt", "N_Opt")):
        if key in planning:
            print(f"{label:<8} {_fmt_int(planning[key])}")
    print(f"chosen   {_fmt_int(n)} ({planning.get('chosen')})")
    return EXIT_OK


def _open_out(path):
    return open(path, "w", newline="") if path and path != "-" else sys.stdout


def cmd_boundaries(args) -> int:
    sched = SpendingSchedule(args.epsilon, args.spending_halflife)
    table = boundary_table(args.alpha, sched).extend_to(args.t_max)
    out = _open_out(args.output)
    try:
        w = csv.writer(out)
        w.writerow(["t", "L_t", "U_t", "spent_lower", "spent_upper", "epsilon_t", "envelope_lower",
                    "envelope_upper"])
        for t in range(1, args.t_max + 1):
            try:
                env_u, env_l = hoeffding_envelope(args.alpha, args.lam, args.q, t)
            except ValueError:
                env_u = env_l = ""
            w.writerow([t, int(table.lower[t]), int(table.upper[t]), repr(float(table.spent_lower[t])),
                        repr(float(table.spent_upper[t])), repr(float(table.epsilon(t))), env_l, env_u])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_tables(args) -> int:
    base = RunConfig(gamma=args.gamma, max_effort=args.max_effort, workers=args.workers)
    variants = args.variants.split(",") if args.variants else list(
        TABLE1_VARIANTS if args.which == "table1" else TABLE2_VARIANTS)
    betas = [float(b) for b in args.betas.split(",")]
    reps = args.reps if args.reps else max(2, round(100 / args.scale))
    out = _open_out(args.output)
    try:
        w = None
        for variant in variants:
            for beta in betas:
                cfg = variant_config(args.which, variant, beta, args.scale, base)
                cell = run_cell(cfg, reps, beta, args.seed, (args.which, variant))
                row = cell.row()
                if w is None:
                    w = csv.DictWriter(out, fieldnames=list(row))
                    w.writeheader()
                w.writerow(row)
                out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import format_checks, run_checks

    checks = run_checks(args.alpha, args.epsilon, args.spending_halflife, args.t_max, quick=args.quick)
    print(format_checks(checks))
    failed = [c.name for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_perm_example(args) -> int:
    base = RunConfig(rule=Fixed(args.delta), gamma=args.gamma, workers=args.workers,
                     max_effort=args.max_effort).validate()
    effects = [float(e) for e in args.effects.split(",")]
    rows = perm_example(effects, base, args.truth_datasets, args.seed)
    print(f"{'effect':>6}  {'truth (exact, 99% CI)':>28}  {'sequential interval':>22}  {'effort':>14}")
    for r in rows:
        print(f"{r.effect:6.2f}  {r.truth:.4f} [{r.truth_low:.4f}, {r.truth_high:.4f}]  "
              f"     [{r.low:.4f}, {r.high:.4f}]  {_fmt_int(r.effort):>14}")
    return EXIT_OK if all(r.admitted for r in rows) else EXIT_NOT_ADMITTED


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcpower", description="Confidence intervals for the power of Monte Carlo tests.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="pilot, planning and main run")
    _add_config_flags(p)
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint file")
    p.add_argument("--json", action="store_true", help="print the JSON report instead of the summary")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plan", help="pilot and choice of N only")
    _add_config_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("boundaries", help="stopping boundaries as CSV")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--spending-halflife", type=int, default=1000)
    p.add_argument("--t-max", type=int, default=2000)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="envelope constant (default 1)")
    p.add_argument("--q", type=float, default=2.0, help="envelope exponent (default 2)")
    p.add_argument("-o", "--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_boundaries)

    p = sub.add_parser("tables", help="replicated effort tables at a chosen scale")
    p.add_argument("which", choices=("table1", "table2"))
    p.add_argument("--scale", type=float, default=1.0, help="multiply every length by this (default 1)")
    p.add_argument("--reps", type=int, help="runs per cell (default 100 / scale)")
    p.add_argument("--betas", default=",".join(map(str, BETAS)))
    p.add_argument("--variants", help="comma-separated rows (default all)")
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--max-effort", type=float, default=1e10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="first seed; run k uses seed + k")
    p.add_argument("-o", "--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("verify", help="re-run the invariant checks")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--spending-halflife", type=int, default=1000)
    p.add_argument("--t-max", type=int, default=2000)
    p.add_argument("--quick", action="store_true", help="smaller grids")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("perm-example", help="permutation-test power against exact enumeration")
    p.add_argument("--effects", default="0.5,1.0,1.5,2.0")
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--truth-datasets", type=int, default=100_000)
    p.add_argument("--max-effort", type=float, default=1e10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_perm_example)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"mcpower: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SamplerError as exc:
        print(f"mcpower: sampler failed: {exc}", file=sys.stderr)
        return EXIT_SAMPLER


if __name__ == "__main__":
    sys.exit(main())
