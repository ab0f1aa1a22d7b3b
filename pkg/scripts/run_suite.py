"""Run a suite file and print a one-line summary per experiment.

    python3 scripts/run_suite.py [suite.json] [--jobs N]
"""
import argparse
import sys
from pathlib import Path

from stochgronwall import harness


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", default=str(harness.default_suite_path()))
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    specs = harness.parse_config(Path(args.config).read_text(), args.config)
    reports = harness.run_suite(specs, jobs=args.jobs)
    for r in reports:
        lhs = f"{r.lhs.ci_hi:.5g}" if r.lhs else "-"
        rhs = f"{r.rhs.value:.5g}" if r.rhs else "-"
        print(f"{r.verdict:14s} {r.experiment_id:28s} ci_hi={lhs:>10s} rhs={rhs:>10s} "
              f"{r.wall_ms / 1000:6.1f}s {r.message}")
    return harness.exit_code(reports)


if __name__ == "__main__":
    sys.exit(main())
