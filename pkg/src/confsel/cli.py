"""Command-line interface: run experiments, regenerate plots, run checks.

The ``CONFSEL_JOBS`` environment variable overrides ``--jobs``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .acceptance import SUITES, run_suite
from .errors import ConfigError
from .experiment import emit_csv, emit_plot, load_report_csv, make_config, parse_config_file, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confsel",
                                     description="Width-optimal conformal prediction-set selection")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a configured Monte Carlo experiment")
    run_p.add_argument("--config", required=True, help="key = value configuration file")
    run_p.add_argument("--reps", type=int, default=None, help="override repetition count")
    run_p.add_argument("--seed", type=int, default=None, help="override master seed")
    run_p.add_argument("--out", default=None, help="override output directory")
    run_p.add_argument("--jobs", type=int, default=None, help="worker processes")

    plot_p = sub.add_parser("plot", help="plot a previously emitted report CSV")
    plot_p.add_argument("--in", dest="input", required=True, help="report CSV path")
    plot_p.add_argument("--out", dest="output", required=True, help="SVG output path")
    plot_p.add_argument("--alpha", type=float, default=0.1, help="nominal miscoverage level")

    check_p = sub.add_parser("check", help="run an acceptance suite")
    check_p.add_argument("--suite", default="quick", choices=sorted(SUITES),
                         help="which suite to run")
    return parser


def _cmd_run(args) -> int:
    raw = parse_config_file(args.config)
    jobs = args.jobs
    env_jobs = os.environ.get("CONFSEL_JOBS")
    if env_jobs is not None:
        jobs = int(env_jobs)
    cfg = make_config(raw, reps=args.reps, seed=args.seed, output_dir=args.out, jobs=jobs)
    report = run_experiment(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    svg_path = out_dir / "report.svg"
    emit_csv(report, csv_path)
    emit_plot(report, svg_path)
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def _cmd_plot(args) -> int:
    report = load_report_csv(args.input, alpha=args.alpha)
    emit_plot(report, args.output)
    print(f"wrote {args.output}")
    return 0


def _cmd_check(args) -> int:
    results = run_suite(args.suite)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "plot":
            return _cmd_plot(args)
        return _cmd_check(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
