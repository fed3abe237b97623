"""Run one experiment grid for both detectors and write CSV/JSON/SVG reports.

    python3 scripts/run_grid.py scripts/configs/skipframe_mass.json --out results/skipframe
    python3 scripts/run_grid.py scripts/configs/gravity_mass.json --out results/gravity --methods galilai pnn
"""
import argparse
import logging
import time
from pathlib import Path

from galilai import harness, report


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--out", required=True)
    ap.add_argument("--methods", nargs="+", default=["galilai"], choices=harness.METHODS)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    totals = {}
    for method in args.methods:
        spec = harness.load_config(args.config, method)
        t0 = time.time()
        result = harness.run_grid(spec, workers=args.workers)
        out = Path(args.out) / method
        report.write(result, out)
        totals[method] = int(result.correct_counts().sum())
        logging.info("%s finished in %.0fs -> %s", method, time.time() - t0, out)
        for line in harness.summarize(result):
            print(f"[{method}] {line}")
    for method, correct in totals.items():
        print(f"{method}: {correct} correct runs")


if __name__ == "__main__":
    main()
