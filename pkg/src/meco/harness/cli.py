"""Command-line entry point: ``meco <experiment> [--config FILE] [--seed N] ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..data import DATASETS_2D, DatasetSpec, generate, write_points_csv
from .config import ConfigError, load_config, make_config
from .records import ConfigMismatchError
from .runners import RUNNERS


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meco", description="Train unnormalized models and run the experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="JSON config; missing keys take the built-in defaults")
        p.add_argument("--seed", type=int, action="append", help="seed to run (repeatable); overrides the config")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--max-steps", type=int, help="step budget per method")
        p.add_argument("--budget-secs", type=float, help="time budget per method, in seconds")
        p.add_argument("--clock", choices=("wall", "cpu"), help="clock that measures --budget-secs")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    g = sub.add_parser("generate-data", help="write a synthetic dataset as CSV")
    g.add_argument("--dataset", required=True, choices=DATASETS_2D + ("gaussian1d",))
    g.add_argument("--n", type=int, default=10_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True, help="CSV file to write")
    g.add_argument("--config", type=Path, help="JSON with a 'params' mapping for the generator")
    return parser


def _resolve(args):
    doc = {}
    if args.config is not None:
        cfg = load_config(args.config, args.command)
        doc = cfg.to_dict()
    if args.seed:
        doc["seeds"] = list(args.seed)
    if args.max_steps is not None or args.budget_secs is not None or args.clock is not None:
        budget = dict(doc.get("budget", {}))
        if args.max_steps is not None:
            budget["max_steps"] = args.max_steps
        if args.budget_secs is not None:
            budget["wall_secs"] = args.budget_secs
        if args.clock is not None:
            budget["clock"] = args.clock
        doc["budget"] = budget
    return make_config(args.command, doc, args.out)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "generate-data":
            params = json.loads(args.config.read_text()).get("params", {}) if args.config else {}
            pts = generate(DatasetSpec(args.dataset, args.n, args.seed, params))
            args.out.parent.mkdir(parents=True, exist_ok=True)
            write_points_csv(args.out, pts)
            print(f"wrote {pts.shape[0]} points to {args.out}")
            return 0
        config = _resolve(args)
        if args.print_config:
            print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
            return 0
        if config.experiment in ("landscape", "variance") and config.budget and args.max_steps is not None:
            print(f"note: --max-steps has no effect on {config.experiment}", file=sys.stderr)
        result = RUNNERS[config.experiment](config)
        print(f"{config.experiment}: config {config.hash}, outputs in {config.output_dir}")
        _report(config.experiment, result)
        return 0
    except (ConfigError, ConfigMismatchError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _report(experiment, result):
    if experiment in ("gaussian1d", "density2d"):
        for rec in result:
            s = rec.summary
            keys = ("final_mse",) if experiment == "gaussian1d" else ("mmd", "frechet")
            vals = "  ".join(f"{k}={s.get(k)!r}" for k in keys)
            print(f"  {rec.cell:<32} steps={s.get('steps')}  {vals}  {s.get('status')}")
    elif experiment == "variance":
        for row in result["cases"]:
            print(f"  {row['noise']:<10} sigma_g2={row['sigma_g2']:.4g}  zeta_g2={row['zeta_g2']:.4g}"
                  f"  steps={row.get('steps_to_target')}")
    else:
        print(f"  {len(result)} grid rows")


if __name__ == "__main__":
    sys.exit(main())
