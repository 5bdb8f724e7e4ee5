"""Command-line entry point: ``zsvl <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import TASK_CHOICES, load_config
from .errors import ZsvlError

log = logging.getLogger("zsvl")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run config (layered over the packaged task defaults)")
    p.add_argument("--task", choices=TASK_CHOICES, help="task to run; overrides `task:` in the config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--cache", help="cache directory (default: $ZSVL_CACHE_DIR or .zsvl-cache)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. weights.k1=0.5 (repeatable)")
    p.add_argument("--stub", action="store_true", help="replace every backend with its deterministic stub")


def _n_values(text: str) -> list[int]:
    """``0-15`` or ``0,5,12``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zsvl", description="Zero-shot vision-language inference toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", help="warm the backend cache for every sample")
    _common(p)
    p = sub.add_parser("run", help="predict and score; writes predictions JSONL and a report")
    _common(p)
    p = sub.add_parser("ablate", help="one run per toggle set, summarised in a single table")
    _common(p)
    p.add_argument("--sets", default=",".join(pipeline.DEFAULT_ABLATION),
                   help=f"comma-separated presets from: {', '.join(pipeline.ABLATION_PRESETS)}")
    p = sub.add_parser("region-sweep", help="one run per region count; writes a CSV")
    _common(p)
    p.add_argument("--n", dest="n_values", type=_n_values, default=list(range(16)),
                   help="region counts, e.g. 0-15 or 0,5,12 (default 0-15)")
    p = sub.add_parser("evaluate", help="re-score an existing predictions file")
    _common(p)
    p.add_argument("--predictions", required=True, help="predictions JSONL written by `run`")
    p = sub.add_parser("demo-data", help="write a small stub dataset and config")
    p.add_argument("--out", required=True, help="directory to create")
    p.add_argument("--task", choices=("vqa", "vcr", "ve"), default="vqa")
    p.add_argument("-n", type=int, default=30, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config(args):
    cfg = load_config(args.config, task=args.task, overrides=args.overrides, cache_dir=args.cache,
                      out_dir=args.out)
    return cfg.with_stub_backends() if args.stub else cfg


def _failures(failures: dict) -> int:
    if not failures:
        return 0
    print(f"{len(failures)} sample(s) failed and were excluded:", file=sys.stderr)
    for sid, msg in sorted(failures.items())[:50]:
        print(f"  {sid}: {msg}", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "demo-data":
            from .synthetic import make_fixture

            path = make_fixture(args.out, args.task, args.n, args.seed)
            print(path)
            return 0

        cfg = _config(args)
        if args.command == "precompute":
            summary = pipeline.precompute(cfg)
            print(json.dumps({k: v for k, v in summary.items() if k != "failures"}, indent=2, sort_keys=True))
            return _failures(summary["failures"])
        if args.command == "run":
            res = pipeline.run(cfg)
            print(res.report.table())
            print(f"predictions: {res.predictions_path}\nreport: {res.report_path}")
            return _failures(res.failures)
        if args.command == "ablate":
            sets = [s.strip() for s in args.sets.split(",") if s.strip()]
            res = pipeline.ablate(cfg, sets)
            print(res.table, end="")
            print(f"table: {res.table_path}")
            return _failures({f"{name}/{sid}": m for name, f in res.failures.items() for sid, m in f.items()})
        if args.command == "region-sweep":
            res = pipeline.region_sweep(cfg, args.n_values)
            print(res.csv, end="")
            print(f"csv: {res.csv_path}")
            return _failures({f"n={n}/{sid}": m for n, f in res.failures.items() for sid, m in f.items()})
        if args.command == "evaluate":
            report = pipeline.evaluate_file(cfg, args.predictions)
            print(report.table())
            if args.out:
                path = Path(cfg.out_dir) / f"evaluation-{cfg.digest()}.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(report.to_json(), encoding="utf-8")
                print(f"report: {path}")
            return 0
    except ZsvlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
