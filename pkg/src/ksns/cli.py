"""Command-line interface.

Subcommands: run, sweep-alpha, study-eps, converge.  Exit codes: 0 completed,
2 blow-up detected, 3 solver divergence, 4 configuration/usage error,
5 step-rejection limit.
"""

from __future__ import annotations

import argparse
import sys

from . import config as cfgmod
from . import harness
from .errors import ConfigError, InvalidInputError

EXIT_CODES = {
    harness.COMPLETED: 0,
    harness.BLOWUP: 2,
    harness.SOLVER_DIVERGENCE: 3,
    harness.STEP_REJECTED_LIMIT: 5,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(4)


def _float_list(raw):
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {raw!r}")


def _int_list(raw):
    try:
        return [int(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {raw!r}")


def build_parser():
    parser = _Parser(prog="ksns", description="chemotaxis-fluid simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation")
    p_run.add_argument("config")
    p_run.add_argument("--csv", default=None, help="time-series output path")
    p_run.add_argument("--snapshot-dir", default=None)
    p_run.add_argument("--quiet", action="store_true")

    p_sweep = sub.add_parser("sweep-alpha", help="run the saturation-exponent sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--alphas", type=_float_list, required=True)
    p_sweep.add_argument("--out", default=None)

    p_eps = sub.add_parser("study-eps", help="run the regularization study")
    p_eps.add_argument("config")
    p_eps.add_argument("--eps", type=_float_list, required=True)
    p_eps.add_argument("--out", default=None)

    p_conv = sub.add_parser("converge", help="run the discretization convergence study")
    p_conv.add_argument("config")
    p_conv.add_argument("--res", type=_int_list, required=True)
    p_conv.add_argument("--out", default=None)
    return parser


def _write_or_print(text, path, quiet=False):
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    elif not quiet:
        sys.stdout.write(text)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4

    try:
        if args.command == "run":
            result = harness.run_and_write(cfg, csv_path=args.csv,
                                           snapshot_dir=args.snapshot_dir)
            if args.csv is None and not cfg.output.csv:
                _write_or_print(harness.format_csv(result.records), None, quiet=args.quiet)
            if not args.quiet:
                print(f"termination: {result.termination} at t = {result.final_state.t:.6g}",
                      file=sys.stderr)
            return EXIT_CODES[result.termination]

        if args.command == "sweep-alpha":
            rows = harness.alpha_sweep(cfg, args.alphas)
            _write_or_print(harness.format_sweep_csv(rows), args.out)
            return 0

        if args.command == "study-eps":
            rows = harness.regularization_study(cfg, args.eps)
            _write_or_print(harness.format_eps_csv(rows), args.out)
            return 0

        if args.command == "converge":
            orders = harness.convergence_study(cfg, args.res)
            _write_or_print(harness.format_orders_csv(orders), args.out)
            return 0
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 4


if __name__ == "__main__":
    sys.exit(main())
