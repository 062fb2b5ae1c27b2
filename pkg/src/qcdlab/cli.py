"""Command line entry point: ``qcdlab <command> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import sys

from .errors import QcdError
from .harness.runner import COMMANDS, run_experiment

HELP = {
    "analyze": "exponents, drifts and closed-form thresholds",
    "simulate": "Monte Carlo cost estimates on a threshold grid",
    "sweep": "empirical optimal threshold per kappa and its gap to the closed forms",
    "optimize": "best statistic in a linear function class",
    "pomdp": "metastability report and survival curve of a hidden chain",
    "path": "knots of the most likely path to the threshold",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="qcdlab", description="CUSUM change detection laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        p.add_argument("--reps", type=int, default=None, help="override the replication count")
        p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        out = run_experiment(args.config, args.out, args.command, args.seed, args.reps, plots=not args.no_plots)
    except (QcdError, OSError) as exc:
        print(f"qcdlab: error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
