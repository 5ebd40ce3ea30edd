#!/usr/bin/env python3
"""
Command-line tool for tensor-train Bermudan option pricing experiments.

Usage:
    price.py run configs/table1_putbasket_p2_N4.cfg
    price.py sweep configs/table4_maxcall_sweep.cfg --workers 4
    price.py check
"""

import argparse
import logging
import sys

from tt_pricing import ExperimentRunner, load_config
from tt_pricing.config import resolve_workers
from tt_pricing.constants import WORKERS_ENV_VAR
from tt_pricing.exceptions import NumericalError, PricingError, ValidationError
from tt_pricing.experiment import format_results, run_checks

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="price",
        description="Price Bermudan options with tensor-train primal and dual methods",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"""
Examples:
  # Single run: primal and/or dual prices for the configured degrees
  %(prog)s run configs/table1_putbasket_p2_N4.cfg

  # Sweep over asset counts and degrees, one row per cell
  %(prog)s sweep configs/table4_maxcall_sweep.cfg --output results/table4

  # Fast property checks (add --full for the acceptance suite)
  %(prog)s check

The worker budget defaults to ${WORKERS_ENV_VAR} (or 1).
        """,
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug output")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings only")

    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "Price the configured problem for every configured degree"),
        ("sweep", "Price every (asset count, degree) cell; failures become nan rows"),
    ):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("config", help="Experiment configuration file")
        command.add_argument("--output", help="Output directory (default: from the config)")
        command.add_argument("--workers", type=int, help="Worker budget")
        command.add_argument(
            "--format",
            choices=["csv", "table", "both"],
            default="both",
            help="Write the CSV files, print a table, or both (default: both)",
        )

    check = commands.add_parser("check", help="Run the property and acceptance test suite")
    check.add_argument("--full", action="store_true", help="Include the slow acceptance tests")
    return parser


def main(argv=None) -> int:
    """Main entry point for the CLI tool."""
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    if args.command == "check":
        try:
            return run_checks(full=args.full)
        except ValidationError as e:
            print(f"Error: {e}", file=sys.stderr)
            return EXIT_INVALID

    try:
        config = load_config(args.config)
        workers = resolve_workers(args.workers)
        runner = ExperimentRunner(config, output_dir=args.output, workers=workers)
        rows = runner.run() if args.command == "run" else runner.sweep()
        if args.format in ("csv", "both"):
            runner.write_outputs(rows)
        if args.format in ("table", "both"):
            print(format_results(rows))
        return EXIT_OK
    except ValidationError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PricingError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
