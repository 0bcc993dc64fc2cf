"""Command line front end: run sweeps, summarise results, self-test."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import _kernels
from .simulate import RunConfig, load_records, run_experiment, write_results


def _parse_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates = {}
    if args.snr is not None:
        updates["snr_db"] = tuple(float(s) for s in args.snr.split(","))
    if args.algos is not None:
        updates["algorithms"] = tuple(a.strip() for a in args.algos.split(","))
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.frames is not None:
        updates["max_frames"] = args.frames
    if args.iterations is not None:
        updates["iterations"] = args.iterations
    if args.out is not None:
        updates["output_dir"] = args.out
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg


def _print_table(records):
    last = {}
    for rec in records:
        key = (rec.algorithm, rec.snr_db)
        if key not in last or rec.iteration > last[key].iteration:
            last[key] = rec
    print(f"{'algorithm':<14}{'snr_db':>8}{'frames':>8}{'errors':>8}{'ber':>12}{'ci95':>12}")
    for key in sorted(last):
        rec = last[key]
        print(
            f"{rec.algorithm:<14}{rec.snr_db:>8.1f}{rec.frames:>8d}"
            f"{rec.bit_errors:>8d}{rec.ber:>12.3e}{rec.ci95:>12.3e}"
        )


def _cmd_run(args) -> int:
    cfg = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    cfg = _parse_overrides(cfg, args)
    print(f"kernel backend: {_kernels.backend_name()}")
    records = run_experiment(cfg, workers=args.workers)
    _print_table(records)
    if cfg.output_dir:
        print(f"results written to {cfg.output_dir}")
    return 0


def _cmd_summarize(args) -> int:
    results = Path(args.results_dir) / "results.jsonl"
    if not results.exists():
        print(f"no results.jsonl under {args.results_dir}", file=sys.stderr)
        return 2
    records = load_records(results)
    write_results(records, args.results_dir)
    _print_table(records)
    return 0


def _cmd_selftest(args) -> int:
    from .selfcheck import run_selftest

    failures = 0
    for suite in run_selftest(fast=args.fast):
        status = "PASS" if suite.passed else "FAIL"
        print(f"[{status}] {suite.name}: {suite.detail}")
        failures += 0 if suite.passed else 1
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jointrx",
        description="Link-level simulator for message-passing receivers with joint "
        "channel estimation and decoding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo sweep")
    run.add_argument("config", nargs="?", help="YAML run configuration (defaults apply if omitted)")
    run.add_argument("--snr", help="comma-separated SNR grid in dB, overrides the config")
    run.add_argument("--algos", help="comma-separated algorithm names, overrides the config")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--frames", type=int, help="maximum frames per operating point")
    run.add_argument("--iterations", type=int, help="receiver iterations")
    run.add_argument("--workers", type=int, help="worker processes (default: JOINTRX_WORKERS or CPU count)")
    run.add_argument("--out", help="output directory for results.jsonl and CSV summaries")
    run.set_defaults(func=_cmd_run)

    summ = sub.add_parser("summarize", help="rewrite CSV summaries from stored results")
    summ.add_argument("results_dir", help="directory containing results.jsonl")
    summ.set_defaults(func=_cmd_summarize)

    check = sub.add_parser("selftest", help="run the built-in oracle suites")
    check.add_argument("--fast", action="store_true", help="smaller instance counts")
    check.set_defaults(func=_cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
