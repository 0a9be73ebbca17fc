"""Command line entry point: ``jlbo run ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from .driver import AssumptionError
from .harness import ALGORITHMS, PROFILES, SWEEP_AXES, config_from_text, emit, run_monte_carlo

EXIT_OK, EXIT_ERROR, EXIT_REFUSED = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jlbo", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a seeded Monte Carlo sweep")
    run.add_argument("--config", help="flat key = value config file")
    run.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    run.add_argument("--seed", type=int)
    run.add_argument("--sweep", choices=SWEEP_AXES)
    run.add_argument("--trials", type=int)
    run.add_argument("--out", required=True)
    run.add_argument("--format", choices=("csv", "json", "svg"), default="csv")
    run.add_argument("--baseline", default="",
                     help="comma-separated baselines: " + ", ".join(ALGORITHMS[1:]))
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--warn-only", action="store_true",
                     help="run even when the pilot budget check fails")
    run.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _config(args):
    cfg = PROFILES[args.profile]
    if args.config:
        with open(args.config) as fh:
            cfg = config_from_text(fh.read(), cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.sweep:
        overrides["sweep"] = args.sweep
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.baseline:
        overrides["baselines"] = tuple(b.strip() for b in args.baseline.split(",") if b.strip())
    if args.warn_only:
        overrides["warn_only"] = True
    return cfg.replace(**overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        records = run_monte_carlo(cfg, workers=args.workers)
        emit(records, args.format, args.out, axis=cfg.sweep)
    except AssumptionError as exc:
        print(f"jlbo: refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"jlbo: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
