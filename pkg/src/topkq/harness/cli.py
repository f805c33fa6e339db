"""Command line entry point: run experiments, plot results, query the oracle."""

from __future__ import annotations

import argparse
import json
import sys

from .. import scoremodel as sm
from .config import ConfigError, load_config
from .experiment import run_experiment
from .plotting import SCHEMAS, FormatError, emit_plot

EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="topkq", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--trials", type=int)
    run.add_argument("--out", default="results")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--strict", action="store_true", help="exit 3 if any trial fails to converge")

    plot = sub.add_parser("plot", help="render a CSV as SVG")
    plot.add_argument("--csv", required=True)
    plot.add_argument("--kind", required=True, choices=sorted(SCHEMAS))
    plot.add_argument("--out")

    orc = sub.add_parser("oracle", help="print the exact ground truth as JSON")
    orc.add_argument("--scores", required=True)
    orc.add_argument("--k", type=int, required=True)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        try:
            cfg = load_config(args.config).with_overrides(trials=args.trials)
            cfg.validate()
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        results = run_experiment(cfg, args.out, workers=args.workers)
        failed = sum(not r.converged for r in results)
        print(f"{len(results)} runs, {failed} not converged, output in {args.out}")
        return EXIT_NOT_CONVERGED if args.strict and failed else 0
    if args.command == "plot":
        try:
            path = emit_plot(args.csv, args.kind, args.out)
        except (FormatError, OSError) as exc:
            print(f"plot error: {exc}", file=sys.stderr)
            return 1
        print(path)
        return 0
    try:
        truth = sm.ground_truth(sm.read_scores(args.scores), args.k)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    d = truth.as_dict()
    print(json.dumps({key: d[key] for key in ("theta_k", "Delta", "m_bar", "m_under", "g_m")}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
