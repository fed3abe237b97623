"""Command-line entry point.

    galilai run-cell --config cfg.json --unseen -19.6 --seed 3
    galilai run-grid --config cfg.json --out results/
    galilai baseline --config cfg.json --out results/        (or --unseen/--seed)
    galilai report --in results/ --format svg

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from galilai import harness, report

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="galilai", description="Out-of-task-distribution detection experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    cell = sub.add_parser("run-cell", help="run one detection and print its JSON outcome")
    cell.add_argument("--config", required=True)
    cell.add_argument("--unseen", required=True, type=float)
    cell.add_argument("--seed", required=True, type=int)
    cell.add_argument("--seen", type=float, default=None, help="test seen value (default: median)")

    grid = sub.add_parser("run-grid", help="run a full grid and write grid.csv/json/svg")
    grid.add_argument("--config", required=True)
    grid.add_argument("--out", required=True)
    grid.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")

    base = sub.add_parser("baseline", help="probabilistic-ensemble baseline (cell or grid)")
    base.add_argument("--config", required=True)
    base.add_argument("--out")
    base.add_argument("--unseen", type=float)
    base.add_argument("--seed", type=int)
    base.add_argument("--seen", type=float, default=None)
    base.add_argument("--workers", type=int, default=None)

    rep = sub.add_parser("report", help="re-render a stored grid")
    rep.add_argument("--in", dest="in_dir", required=True)
    rep.add_argument("--format", required=True, choices=report.FORMATS)
    return parser


def _cell(spec, args) -> int:
    result = harness.run_cell(spec, args.unseen, args.seed, seen_value=args.seen)
    record = dict(result.record) if result.error is None else {"error": result.error}
    record.update(unseen_value=result.unseen_value, seen_value=result.seen_value, seed=result.seed,
                  ground_truth_ootd=result.ground_truth_ootd)
    print(harness.dumps(record))
    return EXIT_OK if result.error is None else EXIT_RUNTIME


def _grid(spec, args) -> int:
    result = harness.run_grid(spec, workers=args.workers)
    paths = report.write(result, args.out)
    for line in harness.summarize(result):
        print(line)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def _load(args, method):
    try:
        return harness.load_config(args.config, method)
    except FileNotFoundError as exc:
        raise UsageError(f"config not found: {args.config}") from exc
    except harness.ConfigError as exc:
        raise UsageError(str(exc)) from exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run-cell":
            return _cell(_load(args, "galilai"), args)
        if args.command == "run-grid":
            return _grid(_load(args, "galilai"), args)
        if args.command == "baseline":
            spec = _load(args, "pnn")
            if args.out is not None:
                return _grid(spec, args)
            if args.unseen is None or args.seed is None:
                raise UsageError("baseline needs --out, or both --unseen and --seed")
            return _cell(spec, args)
        if args.command == "report":
            result = report.load(args.in_dir)
            path = report.write(result, args.in_dir, [args.format])[0]
            print(path)
            return EXIT_OK
    except UsageError as exc:
        print(f"galilai: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"galilai: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
