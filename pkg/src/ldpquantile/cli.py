"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, config_from_dict, load_config
from .coordinator import NumericalError
from .harness import METHODS, ExperimentPlan, emit, run_plan, run_real_data, run_sweep
from .inference import DEFAULT_PATHS, DEFAULT_PIVOT_SEED, PivotTable, critical_values, default_table_path
from .schedule import build_schedule, schedule_diagnostics

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _load_with_overrides(args):
    doc = json.loads(Path(args.config).read_text())
    sched = dict(doc.get("schedule", {}))
    if args.strategy:
        sched["strategy"] = args.strategy
    if args.total_samples is not None:
        sched.pop("rounds", None)
        sched["total_samples"] = args.total_samples
    if args.rounds is not None:
        sched.pop("total_samples", None)
        sched["rounds"] = args.rounds
    doc["schedule"] = sched
    if args.alpha is not None:
        doc["alpha"] = args.alpha
    if args.seed is not None:
        doc["master_seed"] = args.seed
    return config_from_dict(doc)


def _table(args) -> PivotTable:
    return PivotTable.open(args.pivot_table)


def cmd_simulate(args) -> int:
    cfg = _load_with_overrides(args)
    plan = ExperimentPlan(cfg, args.method, args.replications, pivot_paths=args.pivot_paths,
                          pivot_seed=args.pivot_seed, build_pivots=not args.no_build)
    rep = run_plan(plan, n_jobs=args.jobs, table=_table(args))
    if args.output:
        emit(rep, args.output, args.format)
    print(json.dumps({**rep.row(), "wall_clock": round(rep.wall_clock, 3)}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = json.loads(Path(args.grid).read_text())
    reps = run_sweep(doc, n_jobs=args.jobs, table=_table(args))
    emit(reps, args.output, args.format)
    print(f"wrote {len(reps)} rows to {args.output}")
    return EXIT_OK


def cmd_pivot_table(args) -> int:
    table = _table(args)
    if args.action == "inspect":
        for e in sorted(table.entries.values(), key=lambda e: (e.schedule_signature, e.alpha)):
            print(f"{e.schedule_signature}  alpha={e.alpha:g}  paths={e.paths}  seed={e.seed}  v={e.v:.6f}")
        if not table.entries:
            print(f"{table.path}: empty")
        return EXIT_OK
    if args.config:
        sched = _load_with_overrides(args).schedule
    else:
        if args.total_samples is None and args.rounds is None:
            raise ConfigError("pivot-table build needs --config or a horizon")
        sched = build_schedule(args.strategy or "C1", rounds=args.rounds, total_samples=args.total_samples,
                               warmup_frac=args.warmup_frac)
    vals = critical_values(sched, args.alphas, table, args.pivot_paths, args.pivot_seed)
    for a, v in vals.items():
        print(f"{sched.signature()}  T={sched.rounds}  alpha={a:g}  v={v:.6f}")
    return EXIT_OK


def cmd_real_data(args) -> int:
    rate = (0.6, 0.9) if args.rate == "hetero" else float(args.rate)
    res = run_real_data(args.csv, args.group, args.value, tau=args.tau, rate=rate, strategy=args.strategy,
                        merge_smallest=args.merge_smallest, transform=args.transform, seed=args.seed,
                        delimiter=args.delimiter, table=_table(args), pivot_paths=args.pivot_paths,
                        pivot_seed=args.pivot_seed)
    text = json.dumps(res.as_dict(), indent=1)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    diag = schedule_diagnostics(cfg.schedule, cfg.policy, cfg.rbar)
    out = {"clients": cfg.K, "global_tau": cfg.global_tau, "rounds": cfg.schedule.rounds,
           "t_T": cfg.schedule.samples, **diag.as_dict()}
    print(json.dumps(out, indent=1))
    return EXIT_OK


def _add_horizon(p):
    p.add_argument("--strategy", choices=["C1", "C5", "Log"])
    p.add_argument("--total-samples", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)


def _add_pivot(p):
    p.add_argument("--pivot-table", type=Path, default=None,
                   help=f"pivot table file (default {default_table_path()})")
    p.add_argument("--pivot-paths", type=int, default=DEFAULT_PATHS)
    p.add_argument("--pivot-seed", type=int, default=DEFAULT_PIVOT_SEED)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ldpquantile", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run replications of one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--method", choices=METHODS, default="LDPFed")
    p.add_argument("--replications", "-R", type=int, default=1000)
    p.add_argument("--output", "-o")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--jobs", "-j", type=int, default=1)
    p.add_argument("--no-build", action="store_true", help="fail instead of simulating a missing pivot")
    _add_horizon(p)
    _add_pivot(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="run a grid of table cells")
    p.add_argument("--grid", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--jobs", "-j", type=int, default=1)
    _add_pivot(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("pivot-table", help="build or inspect cached critical values")
    p.add_argument("action", choices=["build", "inspect"])
    p.add_argument("--config")
    p.add_argument("--warmup-frac", type=float, default=0.05)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.05])
    _add_horizon(p)
    _add_pivot(p)
    p.set_defaults(fn=cmd_pivot_table)

    p = sub.add_parser("real-data", help="ingest a grouped CSV and estimate a quantile")
    p.add_argument("--csv", required=True)
    p.add_argument("--group", required=True)
    p.add_argument("--value", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--rate", default="0.9", help="truthful rate or 'hetero' (0.6 to 0.9)")
    p.add_argument("--strategy", choices=["C1", "C5", "Log"], default="C1")
    p.add_argument("--merge-smallest", type=int, default=3)
    p.add_argument("--transform", choices=["none", "log"], default="log")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o")
    _add_pivot(p)
    p.set_defaults(fn=cmd_real_data)

    p = sub.add_parser("validate-config", help="check a config file and print schedule diagnostics")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (ConfigError, json.JSONDecodeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
