"""
simulate: run one scenario under one controller and write its artifacts.
"""

import argparse
from pathlib import Path

from rich.table import Table

from ..core.schemas import ControllerKind, MetricsReport
from .common import ExitCode, add_override_arguments, console, execute_run, load_with_overrides

CONTROLLER_CHOICES = [kind.value for kind in ControllerKind]


def add_arguments(parser: argparse.ArgumentParser) -> None:
    """Add arguments for simulate command."""
    parser.add_argument(
        '--scenario', '-s',
        type=str,
        required=True,
        help='Path to scenario file'
    )
    parser.add_argument(
        '--controller', '-c',
        choices=CONTROLLER_CHOICES,
        help='Controller (defaults to the scenario selection)'
    )
    parser.add_argument(
        '--out', '-o',
        type=str,
        required=True,
        help='Output directory'
    )
    add_override_arguments(parser)


def metrics_table(report: MetricsReport) -> Table:
    """Per-generator metrics as a rich table."""
    table = Table(title=f"Metrics ({report.controller})")
    table.add_column("Generator", style="cyan")
    table.add_column("SS error (pu)", justify="right")
    table.add_column("Settling (s)", justify="right")
    table.add_column("Osc. amp (pu)", justify="right")
    table.add_column("Dom. freq (Hz)", justify="right")
    table.add_column("Band energy", justify="right")
    table.add_column("Cost", justify="right")
    for row in report.generators:
        table.add_row(
            row.generator,
            f"{row.steady_state_error:+.3e}",
            f"{row.settling_time:.2f}",
            f"{row.oscillation_amplitude:.3e}",
            f"{row.dominant_frequency:.2f}",
            f"{row.band_energy:.3e}",
            f"{row.control_cost:.3e}",
        )
    return table


def run(args: argparse.Namespace) -> int:
    """Run simulate command."""
    scenario, overrides = load_with_overrides(args)
    report, paths = execute_run(scenario, args.controller, Path(args.out), overrides)
    if not args.quiet:
        console.print(metrics_table(report))
        console.print(f"[green]Results written to {Path(args.out)}[/green]")
    return ExitCode.OK
