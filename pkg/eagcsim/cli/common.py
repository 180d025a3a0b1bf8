"""
Shared pieces of the subcommands: exit codes, common flags and the run pipeline.
"""

import argparse
import os
import time
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import psutil
from rich.console import Console

from ..core.control import control_weights
from ..core.metrics import compute_metrics
from ..core.run_record import RunRecord, write_outputs
from ..core.schemas import AppConfigSchema, MetricsReport, NetworkModel, ScenarioDocument
from ..core.simulation import run_scenario
from ..utils.config_loader import apply_overrides, parse_scenario, scenario_hash
from ..utils.logger import (
    add_context,
    clear_context,
    get_logger,
    log_performance_metrics,
    log_simulation_event,
)

console = Console()

THREADS_ENV = "EAGC_SIM_THREADS"


class ExitCode(IntEnum):
    """Process exit codes."""
    OK = 0
    INTERNAL = 1
    USAGE = 2
    VALIDATION = 3
    DIVERGENCE = 4
    IO = 5
    INTERRUPTED = 130


def add_common_arguments(parser: argparse.ArgumentParser, inherited: bool = False) -> None:
    """
    Add the verbosity flags.

    The top-level parser owns the defaults. Subcommand parsers get the same
    flags with ``inherited=True`` so ``eagc-sim simulate ... -q`` works
    without resetting a ``-q`` given before the command.
    """
    default = argparse.SUPPRESS if inherited else False
    parser.add_argument(
        '--verbose', '-v',
        action='store_true',
        default=default,
        help='Log at DEBUG level'
    )
    parser.add_argument(
        '--quiet', '-q',
        action='store_true',
        default=default,
        help='Only print errors'
    )


def add_override_arguments(parser: argparse.ArgumentParser) -> None:
    """Solver overrides that take precedence over the scenario file."""
    parser.add_argument('--seed', type=int, help='Run seed')
    parser.add_argument('--dt', type=float, help='Integration step (s)')
    parser.add_argument('--horizon', type=float, help='Simulated duration (s)')
    parser.add_argument(
        '--network',
        choices=[model.value for model in NetworkModel],
        help='Network dynamics (defaults to the scenario setting)'
    )


def load_with_overrides(args: argparse.Namespace) -> Tuple[ScenarioDocument, Dict[str, Any]]:
    """Parse the scenario named by --scenario and apply command-line overrides."""
    overrides = {
        "seed": getattr(args, "seed", None),
        "dt": getattr(args, "dt", None),
        "horizon": getattr(args, "horizon", None),
        "network": getattr(args, "network", None),
    }
    scenario = apply_overrides(parse_scenario(args.scenario), **overrides)
    return scenario, {k: v for k, v in overrides.items() if v is not None}


def worker_count(app_config: Optional[AppConfigSchema], tasks: int) -> int:
    """
    Parallel runs allowed for ``tasks`` jobs.

    EAGC_SIM_THREADS takes precedence over the configured max_workers; the
    result never exceeds the task count or the logical CPU count.
    """
    limit = app_config.max_workers if app_config is not None else 1
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            limit = max(1, int(raw))
        except ValueError:
            get_logger(__name__).warning("Ignoring invalid %s=%r", THREADS_ENV, raw)
    cpus = psutil.cpu_count(logical=True) or 1
    return max(1, min(limit, tasks, cpus))


def execute_run(
    scenario: ScenarioDocument,
    controller: Optional[str],
    out_dir: Path,
    overrides: Optional[Dict[str, Any]] = None,
    label: Optional[str] = None,
) -> Tuple[MetricsReport, Dict[str, Path]]:
    """
    Simulate, score and write one run.

    Top-level so compare can ship it to worker processes. ``label`` replaces
    the controller name in the returned report.

    Returns:
        (metrics, artifact paths)
    """
    logger = get_logger(__name__)
    kind = controller or scenario.controller.selection.value
    add_context(scenario=scenario.metadata.name, controller=kind, seed=scenario.solver.seed)
    try:
        log_simulation_event(logger, event_type="run_start", scenario=scenario.metadata.name,
                             controller=kind, horizon_s=scenario.solver.horizon)
        started = time.perf_counter()
        trajectory = run_scenario(scenario, kind)
        report = compute_metrics(trajectory, control_weights(scenario), strict=False)
        if label is not None:
            report = report.model_copy(update={"controller": label})
        record = RunRecord.create(scenario, scenario_hash(scenario), trajectory, overrides)
        paths = write_outputs(trajectory, report, Path(out_dir), record)
        elapsed = time.perf_counter() - started
        log_performance_metrics(
            logger,
            operation="run",
            duration_ms=elapsed * 1000.0,
            steps_per_second=trajectory.metadata["steps"] / max(trajectory.metadata["wall_time_s"], 1e-9),
        )
        for gen_id in trajectory.metadata["stability_violations"]:
            log_simulation_event(logger, event_type="stability_violation",
                                 scenario=scenario.metadata.name, controller=kind, generator=gen_id)
        log_simulation_event(logger, event_type="run_complete", scenario=scenario.metadata.name,
                             controller=kind, records=len(trajectory))
        return report, paths
    finally:
        clear_context()
