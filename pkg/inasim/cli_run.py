"""Command-line interface for inasim.

CLI argument parsing, logging configuration, and the ``main()`` entry point live here.  Every subcommand maps to
one :class:`~inasim.runner.ExperimentRunner` method, so the library interface gives the same results as the CLI.
Command-line flags become the highest-precedence configuration layer on top of the ``--config`` file and the
bundled defaults.
"""

import argparse
import logging
import sys
import traceback
from pathlib import Path
from typing import Any

from inasim.config import MODES, load_config
from inasim.exceptions import CliError, ExitCode, UsageError
from inasim.runner import ExperimentRunner


def setup_logging(verbosity_level: int) -> None:
    """Configure logging based on verbosity level.

    Args:
        verbosity_level: 0=WARNING, 1=INFO, 2+=DEBUG
    """
    if verbosity_level == 0:
        level = logging.WARNING
    elif verbosity_level == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG

    logging.basicConfig(
        level=level,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )


def _int_list(text: str) -> list[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _rounds_cap(text: str) -> int | None:
    if text.lower() == "all":
        return None
    try:
        return int(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected a round count or 'all', got {text!r}") from e


def overrides_from(args: argparse.Namespace, tables: bool = False) -> dict[str, Any]:
    """Translate parsed flags into a configuration layer shaped like the YAML file."""
    overrides: dict[str, Any] = {}
    mesh: dict[str, Any] = {}
    if args.workload:
        overrides["workloads"] = [w.strip() for w in args.workload.split(",") if w.strip()]
    if args.mesh is not None:
        if tables:
            overrides["table_meshes"] = [args.mesh]
        else:
            mesh["size"] = args.mesh
    if args.pes is not None:
        mesh["pes"] = args.pes
    if getattr(args, "mode", None):
        overrides["modes"] = [m.strip() for m in args.mode.split(",") if m.strip()]
    if getattr(args, "rounds_cap", False) is not False:
        overrides["rounds_cap"] = args.rounds_cap
    if args.force_rounds:
        overrides["force_rounds"] = True
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output"] = args.out
    if getattr(args, "event_log", False):
        overrides["event_log"] = True
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    if mesh:
        overrides["mesh"] = mesh
    return overrides


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=Path, default=None, help="YAML experiment configuration file")
    common.add_argument("-w", "--workload", default=None, help="Bundled workload names or layer files, comma-separated")
    common.add_argument("--mesh", type=int, default=None, metavar="N", help="Mesh size N (N x N routers)")
    common.add_argument("--pes", type=_int_list, default=None, metavar="E[,E...]", help="PEs per router")
    common.add_argument("--force-rounds", action="store_true", help="Compute rounds even where no split is needed")
    common.add_argument("-o", "--out", default=None, metavar="DIR", help="Output directory")
    common.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Increase verbosity (-v for INFO, -vv for DEBUG)",
    )
    return common


def _sweep_arguments() -> argparse.ArgumentParser:
    sweep = argparse.ArgumentParser(add_help=False)
    sweep.add_argument("--mode", default=None, help=f"Modes to run, comma-separated from {', '.join(MODES)}")
    sweep.add_argument(
        "--rounds-cap",
        type=_rounds_cap,
        default=False,
        metavar="K",
        help="Simulate at most K rounds per run ('all' for every round)",
    )
    sweep.add_argument("--seed", type=int, default=None, help="Seed of the synthetic weights and inputs")
    return sweep


def build_parser() -> argparse.ArgumentParser:
    argument_parser = argparse.ArgumentParser(
        prog="inasim",
        description="Cycle-accurate mesh NoC simulator for in-network accumulation experiments",
        exit_on_error=True,
    )
    subparsers = argument_parser.add_subparsers(dest="command", required=True)
    common = _common_arguments()
    sweep = _sweep_arguments()

    subparsers.add_parser("tables", parents=[common], help="Print and write the analytic rounds tables")

    run = subparsers.add_parser("run", parents=[common, sweep], help="Simulate a sweep and write the reports")
    run.add_argument("--event-log", action="store_true", help="Write a per-cycle event log for every run")
    run.add_argument(
        "-j", "--jobs", type=int, default=None, help="Worker processes for independent runs (0 uses every CPU)"
    )

    compare = subparsers.add_parser("compare", help="Compare two modes of a finished sweep")
    compare.add_argument("run_dir", type=Path, help="Output directory of a previous run")
    compare.add_argument("--baseline", default="ws_plain", choices=MODES, help="Mode in the ratio numerator")
    compare.add_argument("--variant", default="ws_ina", choices=MODES, help="Mode in the ratio denominator")
    compare.add_argument("-v", "--verbose", action="count", default=0, help="Increase verbosity")

    subparsers.add_parser("trace", parents=[common, sweep], help="Write trace files without simulating")
    return argument_parser


def _dispatch(parsed_args: argparse.Namespace) -> int:
    runner = ExperimentRunner()

    if parsed_args.command == "compare":
        if parsed_args.baseline == parsed_args.variant:
            raise UsageError("baseline and variant must be different modes")
        summary = runner.compare(parsed_args.run_dir, parsed_args.baseline, parsed_args.variant)
        return ExitCode.OK if summary.passed else ExitCode.TEST_FAILURE

    tables = parsed_args.command == "tables"
    config = load_config(parsed_args.config, overrides_from(parsed_args, tables=tables))

    if tables:
        runner.emit_tables(config, pes=config.pes if parsed_args.pes is not None else (1,))
        return ExitCode.OK
    if parsed_args.command == "trace":
        runner.write_traces(config)
        return ExitCode.OK

    report = runner.run_experiment(config)
    return ExitCode.RUNTIME if report.failures else ExitCode.OK


def main(command_line_args: list[str] | None = None) -> int:
    """Main entry point for command line execution.

    Errors raised by the library are logged and mapped to their exit codes here, so the console script and
    library callers see the same status.

    Args:
        command_line_args: Command line arguments (defaults to sys.argv)

    Returns:
        Exit code for the process
    """
    parsed_args = build_parser().parse_args(command_line_args)
    setup_logging(parsed_args.verbose)
    try:
        return _dispatch(parsed_args)
    except CliError as e:
        logging.error(e)
        return e.exit_code
    except Exception:
        logging.error("internal error (use -vv for traceback)")
        if parsed_args.verbose >= 2:
            traceback.print_exc()
        return ExitCode.INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
