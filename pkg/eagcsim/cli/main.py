"""
eagc-sim command line: argument parsing, dispatch to one module per
subcommand, and the mapping from exceptions to process exit codes.
"""

import argparse
import sys
from typing import Callable, Dict, List, Optional

from rich.console import Console
from rich.markup import escape

from .. import __version__
from ..core.errors import (
    ContractViolation,
    MetricsError,
    OutputError,
    SimulationDivergenceError,
    WeightsError,
)
from ..utils.config_loader import ConfigError
from ..utils.logger import get_logger, get_logger_manager, log_system_event
from . import check_stability, compare, gains, simulate, validate_scenario
from .common import ExitCode, add_common_arguments, console

error_console = Console(stderr=True)

COMMANDS: Dict[str, tuple] = {
    'simulate': (simulate, 'Run one scenario under one controller',
                 'Simulate a scenario and write trajectory, metrics and run record'),
    'compare': (compare, 'Run all three controllers and compare',
                'Run primary, conventional and E-AGC control on one scenario'),
    'gains': (gains, 'Print LQR gains per layer',
              'Solve the area and system Riccati equations of a scenario'),
    'check-stability': (check_stability, 'Summarize the stability margin of a run',
                        'Report the recorded per-generator stability-condition margin'),
    'validate': (validate_scenario, 'Validate a scenario file',
                 'Check a scenario against the schema and topology rules'),
}


EXAMPLES = """\
Examples:
  eagc-sim simulate --scenario scenarios/fivebus.scenario --controller eagc --out runs/eagc
  eagc-sim compare --scenario scenarios/fivebus.scenario --out runs/cmp
  eagc-sim gains --scenario scenarios/fivebus.scenario --json
  eagc-sim check-stability --run runs/eagc

Run 'eagc-sim <command> --help' for the options of a command.
"""


def _command_rows(markup: bool) -> str:
    width = max(len(name) for name in COMMANDS) + 2
    rows = []
    for name, (_, help_text, _) in COMMANDS.items():
        label = f"[cyan]{name}[/cyan]" if markup else name
        rows.append(f"  {label}{' ' * (width - len(name))}{help_text}")
    return "\n".join(rows)


def create_main_parser() -> argparse.ArgumentParser:
    """Top-level parser with one subparser per entry of COMMANDS."""
    parser = argparse.ArgumentParser(
        prog="eagc-sim",
        description="eagc-sim - power-system frequency control simulator",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"Available Commands:\n{_command_rows(markup=False)}\n\n{EXAMPLES}",
    )
    parser.add_argument('--version', action='version', version=f'eagc-sim {__version__}')
    add_common_arguments(parser)

    subparsers = parser.add_subparsers(dest='command', metavar='<command>')
    for name, (module, help_text, description) in COMMANDS.items():
        subparser = subparsers.add_parser(name, help=help_text, description=description)
        add_common_arguments(subparser, inherited=True)
        module.add_arguments(subparser)
    return parser


def show_command_help() -> None:
    console.print("\n[bold]Available Commands:[/bold]")
    console.print(_command_rows(markup=True))
    console.print("\n[dim]eagc-sim <command> --help[/dim]")


def _exit_code_for(error: BaseException) -> ExitCode:
    if isinstance(error, KeyboardInterrupt):
        return ExitCode.INTERRUPTED
    if isinstance(error, SimulationDivergenceError):
        return ExitCode.DIVERGENCE
    if isinstance(error, (ConfigError, WeightsError, ContractViolation, MetricsError)):
        return ExitCode.VALIDATION
    if isinstance(error, (OutputError, OSError)):
        return ExitCode.IO
    return ExitCode.INTERNAL


def main(args: Optional[List[str]] = None) -> int:
    """
    Run one eagc-sim command.

    Args:
        args: Arguments without the program name; defaults to sys.argv[1:]

    Returns:
        ExitCode value
    """
    parser = create_main_parser()

    if args is None:
        args = sys.argv[1:]

    try:
        parsed_args = parser.parse_args(args)
    except SystemExit as e:
        return ExitCode.OK if e.code in (0, None) else ExitCode.USAGE

    if parsed_args.quiet:
        console.quiet = True

    level = "DEBUG" if parsed_args.verbose else "WARNING" if parsed_args.quiet else None
    get_logger_manager().configure_from_app_config(level_override=level)

    if not parsed_args.command:
        if not parsed_args.quiet:
            show_command_help()
        return ExitCode.OK

    command: Callable[[argparse.Namespace], int] = COMMANDS[parsed_args.command][0].run
    logger = get_logger(__name__)
    log_system_event(logger, event_type="startup", component=parsed_args.command, version=__version__)
    try:
        return int(command(parsed_args))
    except KeyboardInterrupt as e:
        error_console.print("\n[yellow]Operation interrupted by user[/yellow]")
        return _exit_code_for(e)
    except Exception as e:
        code = _exit_code_for(e)
        log_system_event(logger, event_type="failure", component=parsed_args.command,
                         status="error", message=str(e), exit_code=int(code))
        if code == ExitCode.INTERNAL:
            error_console.print(f"[red]Unexpected error: {escape(str(e))}[/red]")
            if parsed_args.verbose:
                error_console.print_exception()
        else:
            error_console.print(f"[red]Error: {escape(str(e))}[/red]")
        return code


if __name__ == '__main__':
    sys.exit(main())
