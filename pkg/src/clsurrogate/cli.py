"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime or numeric error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .datasets import SyntheticSpec, generate_synthetic, write_csv
from .errors import ConfigError, IngestionError, MetricError, NumericError, RunError, ScenarioError
from .harness import (
    demo_forgetting,
    export_results,
    format_rank_table,
    format_summary,
    load_records,
    run_benchmark,
    summarize_ranks,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("clsurrogate")


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(n_samples=args.n_samples, feature_dim=args.feature_dim,
                         n_categories=args.n_categories, noise_std=args.noise_std, seed=args.seed)
    path = write_csv(generate_synthetic(spec), args.output)
    print(f"wrote {spec.n_samples} samples to {path}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    updates = {}
    if args.trials is not None:
        updates["n_trials"] = args.trials
    if args.output is not None:
        updates["output"] = Path(args.output)
    if args.parallelism is not None:
        updates["parallelism"] = args.parallelism
        updates["sequential_timing"] = False
    cfg = cfg.model_copy(update=updates)
    report = run_benchmark(cfg)
    records, summary = export_results(report, cfg.output)
    print(format_summary(report))
    print(f"\nrecords: {records}\nsummary: {summary}")
    degraded = [s for s in report.strategies if report.summaries[s].degraded]
    if degraded:
        log.warning("degraded strategies: %s", ", ".join(degraded))
    return EXIT_OK


def _cmd_demo(args) -> int:
    cfg = load_config(args.config)
    if args.trials is not None:
        cfg = cfg.model_copy(update={"n_trials": args.trials})
    report = demo_forgetting(cfg)
    payload = report.to_dict()
    if args.output:
        Path(args.output).write_text(json.dumps(payload), encoding="utf-8")
        print(f"wrote demo report to {args.output}")
    errs = ", ".join(f"{e:.1f}%" for e in report.median_percent_error)
    print(f"median percent error per bin: {errs}")
    print(f"first/last bin error ratio (median): {report.median_ratio:.2f}")
    print(f"predictions inside the last two bins' range (median): {report.median_fraction_in_last_two:.1%}")
    return EXIT_OK


def _cmd_rank(args) -> int:
    reports = [load_records(p) for p in args.records]
    table = summarize_ranks(reports)
    text = format_rank_table(table)
    print(text)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clsurrogate", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset to CSV")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--n-samples", type=int, default=2000)
    g.add_argument("--feature-dim", type=int, default=8)
    g.add_argument("--n-categories", type=int, default=3)
    g.add_argument("--noise-std", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_data)

    r = sub.add_parser("run", help="run a benchmark from a YAML config")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="results directory (overrides the config)")
    r.add_argument("--trials", type=int)
    r.add_argument("--parallelism", type=int, help="run trials concurrently (disables sequential timing)")
    r.set_defaults(func=_cmd_run)

    d = sub.add_parser("demo-forgetting", help="show catastrophic forgetting with the Naive strategy")
    d.add_argument("config")
    d.add_argument("-o", "--output", help="write the demo report as JSON")
    d.add_argument("--trials", type=int)
    d.set_defaults(func=_cmd_demo)

    k = sub.add_parser("rank", help="mean ranks across benchmark record files")
    k.add_argument("records", nargs="+")
    k.add_argument("-o", "--output")
    k.set_defaults(func=_cmd_rank)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ScenarioError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, RunError, MetricError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
