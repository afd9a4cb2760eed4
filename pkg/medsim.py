#!/usr/bin/env python3
"""
Medsim - Command Line Interface
Entry point for estimating natural path-specific and interventional mediation effects.
"""

import argparse
import os
import sys
from typing import List, Optional, Tuple

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.controllers.pipeline import RunPipeline, load_report
from src.models.config import RunConfig, read_config_file
from src.utils.errors import ConfigError, MedsimError
from src.utils.validators import ConfigValidator
from src.views.cli import CLIView, Colors, MessageLevel, configure_logging


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments.

    Returns:
        argparse.Namespace: Parsed arguments
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true",
                        help="Enable verbose output with per-iteration details")
    common.add_argument("-q", "--quiet", action="store_true",
                        help="Suppress all output except errors")

    parser = argparse.ArgumentParser(
        prog="medsim",
        description="Estimate natural path-specific and interventional mediation effects by Monte Carlo simulation.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s run config.json                      # Fit, estimate, bootstrap, write outputs
  %(prog)s run config.json --seed 7 --threads 4 # Override seed and worker count
  %(prog)s run config.json --output-dir ./out   # Write outputs elsewhere
  %(prog)s validate config.json                 # List every configuration problem
  %(prog)s compare a/effects.json b/effects.json --labels glm flow
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", parents=[common], help="Run the configured analysis")
    run.add_argument("config", help="Path to the JSON run configuration")
    run.add_argument("--seed", type=int, default=None, help="Override the configured seed")
    run.add_argument("--threads", type=int, default=None, help="Cap on worker threads")
    run.add_argument("-o", "--output-dir", dest="output_dir", default=None,
                     help="Override the configured output directory")

    validate = subparsers.add_parser("validate", parents=[common], help="Check a configuration without running it")
    validate.add_argument("config", help="Path to the JSON run configuration")

    compare = subparsers.add_parser("compare", parents=[common], help="Show several effects.json files side by side")
    compare.add_argument("reports", nargs="+", help="effects.json files written by earlier runs")
    compare.add_argument("--labels", nargs="+", default=None, help="Column labels (default: parent directory names)")

    return parser.parse_args(argv)


def load_run_config(path: str, cli: CLIView) -> Tuple[Optional[RunConfig], int]:
    """Validate and parse a configuration file, printing every problem found.

    Args:
        path: Configuration file path
        cli: CLI view instance for output

    Returns:
        tuple: (config or None, exit code)
    """
    data = read_config_file(path)
    base_dir = os.path.dirname(os.path.abspath(path))
    is_valid, errors, warnings = ConfigValidator.validate_config(data, base_dir)
    cli.print_problems(errors, warnings)
    if not is_valid:
        cli.print(f"{len(errors)} problem(s) in {path}", MessageLevel.ERROR)
        return None, ConfigError.exit_code
    return RunConfig.from_dict(data, base_dir), 0


def print_configuration(config: RunConfig, cli: CLIView):
    if cli.quiet:
        return
    items = [
        ("Data", config.data_path),
        ("Engine", config.engine),
        ("Mode", config.mode),
        ("Contrast", f"d = {config.schema.d:g}, d* = {config.schema.d_star:g}"),
        ("Simulation", f"J = {config.J}" if config.engine != "flow" else f"b = {config.b}"),
        ("Bootstrap", f"B = {config.B}, alpha = {config.alpha:g}" if config.B else "disabled"),
        ("Seed", str(config.seed)),
        ("Threads", str(config.threads)),
        ("Output Directory", config.output_path),
    ]
    cli.print_fields((label, cli.style(value, Colors.CYAN)) for label, value in items)
    print()


def command_run(args: argparse.Namespace, cli: CLIView) -> int:
    config, code = load_run_config(args.config, cli)
    if config is None:
        return code
    config = config.with_overrides(seed=args.seed, threads=args.threads, output_dir=args.output_dir)
    cli.print_banner()
    print_configuration(config, cli)
    report = RunPipeline(config).run()
    cli.print_effects(report.effects)
    cli.print_summary(report.timings, report.outputs)
    return 0


def command_validate(args: argparse.Namespace, cli: CLIView) -> int:
    config, code = load_run_config(args.config, cli)
    if config is None:
        return code
    cli.print(f"{args.config} is valid", MessageLevel.SUCCESS)
    return 0


def command_compare(args: argparse.Namespace, cli: CLIView) -> int:
    labels = args.labels or [os.path.basename(os.path.dirname(os.path.abspath(p))) or p for p in args.reports]
    if len(labels) != len(args.reports):
        raise ConfigError(f"Got {len(labels)} label(s) for {len(args.reports)} report(s)")
    if len(set(labels)) != len(labels):
        labels = [f"{label} ({k})" for k, label in enumerate(labels, start=1)]
    reports = {label: load_report(path) for label, path in zip(labels, args.reports)}
    cli.print_comparison(reports)
    return 0


COMMANDS = {"run": command_run, "validate": command_validate, "compare": command_compare}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI; returns the process exit code."""
    args = parse_arguments(argv)
    cli = CLIView(verbose=args.verbose, quiet=args.quiet)
    configure_logging(cli)

    try:
        return COMMANDS[args.command](args, cli)
    except KeyboardInterrupt:
        cli.print("\n\nOperation cancelled by user.", MessageLevel.WARNING)
        return 130
    except MedsimError as e:
        cli.print(e.describe(), MessageLevel.ERROR)
        return e.exit_code
    except Exception as e:
        cli.print(f"\nUnexpected error: {e}", MessageLevel.ERROR)
        if cli.verbose:
            import traceback
            cli.print(traceback.format_exc(), MessageLevel.DEBUG)
        return 1


if __name__ == "__main__":
    sys.exit(main())
