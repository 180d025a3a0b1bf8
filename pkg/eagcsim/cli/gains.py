"""
gains: print the LQR gains, Riccati solutions and residuals of each layer.
"""

import argparse
import json

from rich.table import Table

from ..core.control import layer_gains
from ..utils.config_loader import parse_scenario
from .common import ExitCode, console


def add_arguments(parser: argparse.ArgumentParser) -> None:
    """Add arguments for gains command."""
    parser.add_argument(
        '--scenario', '-s',
        type=str,
        required=True,
        help='Path to scenario file'
    )
    parser.add_argument(
        '--json',
        action='store_true',
        help='Print gains as JSON'
    )


def run(args: argparse.Namespace) -> int:
    """Run gains command."""
    scenario = parse_scenario(args.scenario)
    gains = layer_gains(scenario)

    if args.json:
        payload = {
            layer: {
                "participants": (scenario.areas[layer].generators if layer in scenario.areas
                                 else list(scenario.areas)),
                "k": gain.k.tolist(),
                "p": gain.p,
                "residual": gain.residual,
                "decay_rate": gain.decay_rate,
            }
            for layer, gain in gains.items()
        }
        print(json.dumps(payload, indent=2))
        return ExitCode.OK

    table = Table(title=f"LQR gains ({scenario.metadata.name})")
    table.add_column("Layer", style="cyan")
    table.add_column("Participants")
    table.add_column("K", justify="right")
    table.add_column("P", justify="right")
    table.add_column("Residual", justify="right")
    table.add_column("Decay (1/s)", justify="right")
    for layer, gain in gains.items():
        members = scenario.areas[layer].generators if layer in scenario.areas else list(scenario.areas)
        table.add_row(
            layer,
            ", ".join(members),
            ", ".join(f"{k:.7f}" for k in gain.k),
            f"{gain.p:.7f}",
            f"{gain.residual:.2e}",
            f"{gain.decay_rate:.7f}",
        )
    console.print(table)
    return ExitCode.OK
