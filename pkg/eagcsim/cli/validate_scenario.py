"""
validate: check a scenario file and optionally emit its normalized form.
"""

import argparse
from pathlib import Path

from rich.panel import Panel

from ..utils.config_loader import dump_scenario, parse_scenario, scenario_hash
from .common import ExitCode, console


def add_arguments(parser: argparse.ArgumentParser) -> None:
    """Add arguments for validate command."""
    parser.add_argument(
        '--scenario', '-s',
        type=str,
        required=True,
        help='Path to scenario file'
    )
    parser.add_argument(
        '--emit-normalized',
        type=str,
        metavar='PATH',
        help='Write the normalized scenario to PATH'
    )


def run(args: argparse.Namespace) -> int:
    """Run validate command."""
    scenario = parse_scenario(args.scenario)

    if args.emit_normalized:
        dump_scenario(scenario, Path(args.emit_normalized))

    if not args.quiet:
        network = scenario.network
        summary = "\n".join([
            f"[bold]{scenario.metadata.name}[/bold]",
            f"Buses: {len(network.buses)}   Lines: {len(network.lines)}   "
            f"Generators: {len(scenario.generators)}   Loads: {len(scenario.loads)}",
            f"Areas: {', '.join(scenario.areas)}",
            f"Disturbances: {len(scenario.disturbances)}",
            f"Controller: {scenario.controller.selection.value}",
            f"Hash: {scenario_hash(scenario)}",
        ])
        console.print(Panel(summary, title="[green]Scenario valid[/green]", style="green"))
    return ExitCode.OK
