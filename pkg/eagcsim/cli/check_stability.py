"""
check-stability: summarize the recorded stability-condition margin of a run.
"""

import argparse
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from rich.table import Table

from ..core.run_record import load_run
from ..core.simulation import Trajectory
from .common import ExitCode, console


def add_arguments(parser: argparse.ArgumentParser) -> None:
    """Add arguments for check-stability command."""
    parser.add_argument(
        '--run', '-r',
        type=str,
        required=True,
        help='Run directory written by simulate or compare'
    )


def margin_summary(trajectory: Trajectory) -> List[Dict[str, Any]]:
    """Minimum margin, its time and the violated fraction per generator."""
    rows = []
    for gen_id in trajectory.generator_ids:
        margin = trajectory.series(f"stability_margin.{gen_id}")
        worst = int(np.argmin(margin))
        rows.append({
            "generator": gen_id,
            "min_margin": float(margin[worst]),
            "time_of_min": float(trajectory.time[worst]),
            "violated_fraction": float(np.mean(margin < 0)),
            "satisfied": bool(np.all(margin >= 0)),
        })
    return rows


def run(args: argparse.Namespace) -> int:
    """Run check-stability command."""
    trajectory, record = load_run(Path(args.run))
    rows = margin_summary(trajectory)

    if not args.quiet:
        table = Table(title=f"Stability margin ({record.scenario_name}, {record.controller})")
        table.add_column("Generator", style="cyan")
        table.add_column("Min margin (pu)", justify="right")
        table.add_column("At t (s)", justify="right")
        table.add_column("Violated", justify="right")
        table.add_column("Status")
        for row in rows:
            table.add_row(
                row["generator"],
                f"{row['min_margin']:.4g}",
                f"{row['time_of_min']:.2f}",
                f"{100.0 * row['violated_fraction']:.1f}%",
                "[green]OK[/green]" if row["satisfied"] else "[red]VIOLATED[/red]",
            )
        console.print(table)
    return ExitCode.OK
