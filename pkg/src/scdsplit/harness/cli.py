"""
Command-line entry point.

Exit codes: 0 on success, 1 when a theorem check fails, 2 on a malformed
configuration or invalid arguments.
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import InvalidInput
from .experiment import ConfigError, ablate_loss, ablate_sigma, all_points, load_config, run_experiment, write_outputs
from .theorems import all_passed, theorem_checks

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


def _sigma_list(text: str):
    try:
        values = tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty sigma list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scdsplit", description="Smoothed conformal prediction experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_args(p):
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--trials", type=int, help="override the number of trials")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="CSV output path (a .txt table is written next to it)")

    p = sub.add_parser("run", help="compare methods over repeated trials")
    experiment_args(p)
    p.add_argument("--dump-points", action="store_true", help="also write per-test-point sets")

    p = sub.add_parser("ablate-sigma", help="SCD-split with fixed smoothing widths")
    experiment_args(p)
    p.add_argument("--sigmas", type=_sigma_list, help="comma-separated widths (default: config 'sigmas')")

    p = sub.add_parser("ablate-loss", help="validation losses for every candidate width")
    experiment_args(p)
    p.add_argument("--sigmas", type=_sigma_list, help="comma-separated widths (default: config grid)")

    p = sub.add_parser("theorem-checks", help="numerical checks of the method's guarantees")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _emit(table, out, points=None):
    sys.stdout.write(table.to_text())
    if out:
        for path in write_outputs(table, out, points):
            print(f"wrote {path}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on bad usage, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=max(logging.WARNING - 10 * args.verbose, logging.DEBUG),
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "theorem-checks":
        results = theorem_checks(seed=args.seed, emit=print)
        ok = all_passed(results)
        n_gating = sum(r.gating for r in results)
        n_ok = sum(r.passed for r in results if r.gating)
        print(f"{n_ok}/{n_gating} checks passed")
        return EXIT_OK if ok else EXIT_CHECK_FAILED

    try:
        overrides = {"trials": args.trials, "seed": args.seed}
        if args.command == "run":
            overrides["dump_points"] = args.dump_points or None
        config = load_config(args.config, **overrides)
        out = args.out or config.output
        if args.command == "run":
            table = run_experiment(config)
            _emit(table, out, all_points(table) if config.dump_points else None)
        elif args.command == "ablate-sigma":
            _emit(ablate_sigma(config, args.sigmas), out)
        else:
            _emit(ablate_loss(config, args.sigmas), out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidInput as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
