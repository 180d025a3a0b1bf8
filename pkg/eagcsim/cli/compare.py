"""
compare: run all three controllers on one scenario and tabulate system metrics.

With --contrast-network every controller also runs with the other network
dynamics (dynamic or quasi-static), labelled "<controller>/<dynamics>".
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Tuple

from rich.table import Table

from ..core.run_record import COMPARISON_METRICS, write_comparison
from ..core.schemas import ControllerKind, MetricsReport, NetworkModel, ScenarioDocument
from ..utils.config_loader import ConfigError, apply_overrides, load_app_config
from ..utils.logger import get_logger
from .common import (
    ExitCode,
    add_override_arguments,
    console,
    execute_run,
    load_with_overrides,
    worker_count,
)

COMPARISON_FILE = "comparison.csv"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    """Add arguments for compare command."""
    parser.add_argument(
        '--scenario', '-s',
        type=str,
        required=True,
        help='Path to scenario file'
    )
    parser.add_argument(
        '--out', '-o',
        type=str,
        required=True,
        help='Output directory (one sub-directory per controller)'
    )
    parser.add_argument(
        '--contrast-network',
        action='store_true',
        help='Also run every controller with the other network dynamics'
    )
    add_override_arguments(parser)


def comparison_table(reports: List[MetricsReport]) -> Table:
    """Metrics side by side, one column per controller."""
    table = Table(title="Controller comparison (system metrics)")
    table.add_column("Metric", style="cyan")
    for report in reports:
        table.add_column(report.controller, justify="right")
    for metric in COMPARISON_METRICS:
        table.add_row(metric, *(f"{getattr(r.system, metric):.4g}" for r in reports))
    return table


Job = Tuple[str, ScenarioDocument, str, Path, Dict[str, Any]]


def _jobs(scenario: ScenarioDocument, out_dir: Path, overrides: Dict[str, Any], contrast: bool) -> List[Job]:
    """(label, scenario, controller, directory, overrides) of every run to make."""
    jobs = [(kind.value, scenario, kind.value, out_dir / kind.value, overrides) for kind in ControllerKind]
    if contrast:
        other = next(m for m in NetworkModel if m != scenario.network.dynamics).value
        switched = apply_overrides(scenario, network=other)
        jobs += [
            (f"{kind.value}/{other}", switched, kind.value, out_dir / f"{kind.value}-{other}",
             {**overrides, "network": other})
            for kind in ControllerKind
        ]
    return jobs


def run(args: argparse.Namespace) -> int:
    """Run compare command."""
    logger = get_logger(__name__)
    scenario, overrides = load_with_overrides(args)
    out_dir = Path(args.out)
    jobs = _jobs(scenario, out_dir, overrides, args.contrast_network)

    try:
        app_config = load_app_config()
    except ConfigError:
        app_config = None
    workers = worker_count(app_config, len(jobs))
    logger.info("Comparing %d runs with %d worker(s)", len(jobs), workers)

    results: Dict[str, MetricsReport] = {}
    if workers == 1:
        for label, document, kind, directory, applied in jobs:
            results[label], _ = execute_run(document, kind, directory, applied, label)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                label: pool.submit(execute_run, document, kind, directory, applied, label)
                for label, document, kind, directory, applied in jobs
            }
            for label, future in futures.items():
                results[label], _ = future.result()

    reports = [results[label] for label, *_ in jobs]
    path = write_comparison(reports, out_dir / COMPARISON_FILE)
    if not args.quiet:
        console.print(comparison_table(reports))
        console.print(f"[green]Comparison written to {path}[/green]")
    return ExitCode.OK
