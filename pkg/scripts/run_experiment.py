"""Train FF, ZF and FL desk-scale models and compare them with the kinematic baselines.

Usage: python3 scripts/run_experiment.py [--config cfg.json] [--out runs/desk]
"""
import argparse
import json
import logging
import sys

from mdnpath import metrics
from mdnpath.experiment import ExperimentConfig, run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="JSON object of ExperimentConfig fields")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(asctime)s %(message)s")
    cfg = ExperimentConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = ExperimentConfig.from_dict(json.load(fh))
    res = run(cfg, args.out)
    print(metrics.format_table(res.report))
    for name, (ok, lhs, rhs) in res.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({lhs:.3f} vs {rhs:.3f})")
    print("timings (s):", {k: round(v, 1) for k, v in res.timings.items()})
    return 0


if __name__ == "__main__":
    sys.exit(main())
