"""
Run artifacts: trajectory.csv, metrics.csv and run.meta.

A run directory holds everything needed to repeat a run bit for bit: the
scenario hash, the effective seed and solver values and the tool version.
The files of a run are staged in a hidden sibling directory and moved into
place together, so a failed run never leaves partial output behind.
"""

import csv
import io
import json
import logging
import os
import platform
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import psutil

from .. import __version__
from .errors import ContractViolation, OutputError
from .schemas import MetricsReport, ScenarioDocument
from .simulation import Trajectory

logger = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectory.csv"
METRICS_FILE = "metrics.csv"
META_FILE = "run.meta"

METRIC_FIELDS = [
    "scope",
    "id",
    "steady_state_error",
    "settling_time",
    "oscillation_amplitude",
    "dominant_frequency",
    "band_energy",
    "control_cost",
    "coordination_share",
    "interarea_intv_rms",
]


def host_info() -> Dict[str, Any]:
    """Machine description stored with each run."""
    memory = psutil.virtual_memory()
    return {
        "hostname": platform.node(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "cpu_count": psutil.cpu_count(logical=True),
        "memory_gb": round(memory.total / 1e9, 2),
    }


@dataclass
class RunRecord:
    """
    Provenance of one simulation run.

    Attributes:
        scenario_name: Scenario metadata name
        scenario_hash: SHA-256 of the canonical scenario
        controller: Controller selection
        seed: Effective run seed
        solver: Effective solver values
        overrides: Command-line overrides that were applied
        tool_version: Package version that produced the run
        created: Creation time
        wall_time_s: Simulation wall time
        stability_violations: Generators whose stability condition failed
        host: Machine description
    """

    scenario_name: str
    scenario_hash: str
    controller: str
    seed: int
    solver: Dict[str, Any]
    overrides: Dict[str, Any] = field(default_factory=dict)
    tool_version: str = __version__
    created: datetime = field(default_factory=datetime.now)
    wall_time_s: Optional[float] = None
    stability_violations: List[str] = field(default_factory=list)
    host: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        scenario: ScenarioDocument,
        scenario_hash: str,
        trajectory: Trajectory,
        overrides: Optional[Dict[str, Any]] = None,
    ) -> "RunRecord":
        """
        Record for a finished run.

        Args:
            scenario: Effective scenario (overrides applied)
            scenario_hash: Hash of the effective scenario
            trajectory: Run output
            overrides: Overrides taken from the command line

        Returns:
            New RunRecord
        """
        return cls(
            scenario_name=scenario.metadata.name,
            scenario_hash=scenario_hash,
            controller=str(trajectory.metadata.get("controller", "")),
            seed=scenario.solver.seed,
            solver=scenario.solver.model_dump(mode="json"),
            overrides={k: v for k, v in (overrides or {}).items() if v is not None},
            wall_time_s=trajectory.metadata.get("wall_time_s"),
            stability_violations=list(trajectory.metadata.get("stability_violations", [])),
            host=host_info(),
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["created"] = self.created.isoformat()
        return data

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, ensure_ascii=False)

    def save(self, output_dir: Path) -> Path:
        """
        Write run.meta into ``output_dir``.

        Raises:
            OutputError: If the file cannot be written
        """
        path = Path(output_dir) / META_FILE
        atomic_write(path, lambda f: f.write(self.to_json()))
        logger.debug("Saved run record: %s", path)
        return path

    @classmethod
    def load(cls, path: Path) -> "RunRecord":
        """
        Read a run.meta file.

        Raises:
            OutputError: If the file is missing or malformed
        """
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            data["created"] = datetime.fromisoformat(data["created"])
            return cls(**data)
        except FileNotFoundError:
            raise OutputError("run record not found", path) from None
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise OutputError(f"invalid run record ({e})", path) from e


def atomic_write(path: Path, writer: Callable[[io.TextIOBase], Any]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                writer(f)
            os.replace(tmp_name, path)
        except BaseException:
            Path(tmp_name).unlink(missing_ok=True)
            raise
    except OSError as e:
        raise OutputError(f"failed to write ({e.strerror or e})", path) from e


def metrics_rows(report: MetricsReport) -> List[Dict[str, Any]]:
    """One row per generator plus the system row."""
    rows: List[Dict[str, Any]] = []
    for entry in report.generators:
        row = {"scope": "generator", "id": entry.generator}
        row.update(entry.model_dump(exclude={"generator"}))
        rows.append(row)
    system = {"scope": "system", "id": "system"}
    system.update(report.system.model_dump())
    rows.append(system)
    return rows


def _write_trajectory(f, trajectory: Trajectory) -> None:
    table = np.column_stack([trajectory.time, trajectory.data])
    np.savetxt(f, table, fmt="%.9g", delimiter=",",
               header=",".join(["time", *trajectory.columns]), comments="")


def _write_metrics(f, report: MetricsReport) -> None:
    writer = csv.DictWriter(f, fieldnames=METRIC_FIELDS, restval="", lineterminator="\n")
    writer.writeheader()
    for row in metrics_rows(report):
        writer.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})


def _staging_dir(out_dir: Path) -> Path:
    try:
        out_dir.parent.mkdir(parents=True, exist_ok=True)
        return Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    except OSError as e:
        raise OutputError(f"failed to create run directory ({e.strerror or e})", out_dir) from e


def _publish(staging: Path, out_dir: Path, names: List[str]) -> None:
    """Move staged files into ``out_dir``; on failure remove what was already moved."""
    try:
        if not out_dir.exists():
            os.replace(staging, out_dir)
            return
        moved: List[Path] = []
        try:
            for name in names:
                os.replace(staging / name, out_dir / name)
                moved.append(out_dir / name)
        except OSError:
            for path in moved:
                path.unlink(missing_ok=True)
            raise
    except OSError as e:
        raise OutputError(f"failed to publish run ({e.strerror or e})", out_dir) from e


def write_outputs(
    trajectory: Trajectory,
    metrics: MetricsReport,
    out_dir: Path,
    record: Optional[RunRecord] = None,
) -> Dict[str, Path]:
    """
    Emit the artifacts of a run.

    All files are written into a hidden sibling directory first and moved
    into ``out_dir`` only once every one of them succeeded.

    Args:
        trajectory: Recorded run
        metrics: Metrics of the run
        out_dir: Destination directory (created if missing)
        record: Provenance written as run.meta

    Returns:
        Mapping of artifact name to path

    Raises:
        ContractViolation: If the horizon is shorter than one record interval
        OutputError: If a file cannot be written
    """
    horizon = float(trajectory.metadata.get("horizon", trajectory.time[-1] if len(trajectory) else 0.0))
    record_dt = float(trajectory.metadata.get("record_dt", 0.0))
    if len(trajectory) == 0 or horizon < record_dt:
        raise ContractViolation(
            f"horizon {horizon:g}s is shorter than the record interval {record_dt:g}s"
        )

    out_dir = Path(out_dir)
    files = {"trajectory": TRAJECTORY_FILE, "metrics": METRICS_FILE}
    if record is not None:
        files["meta"] = META_FILE

    staging = _staging_dir(out_dir)
    try:
        atomic_write(staging / TRAJECTORY_FILE, lambda f: _write_trajectory(f, trajectory))
        atomic_write(staging / METRICS_FILE, lambda f: _write_metrics(f, metrics))
        if record is not None:
            record.save(staging)
        _publish(staging, out_dir, list(files.values()))
    finally:
        shutil.rmtree(staging, ignore_errors=True)

    logger.info("Wrote %d records to %s", len(trajectory), out_dir)
    return {key: out_dir / name for key, name in files.items()}


COMPARISON_METRICS = (
    "steady_state_error",
    "settling_time",
    "oscillation_amplitude",
    "band_energy",
    "control_cost",
    "interarea_intv_rms",
)


def comparison_rows(reports: List[MetricsReport]) -> List[Dict[str, Any]]:
    """Long-format system metrics: one row per metric and controller."""
    return [
        {"metric": metric, "controller": report.controller, "value": getattr(report.system, metric)}
        for metric in COMPARISON_METRICS
        for report in reports
    ]


def write_comparison(reports: List[MetricsReport], path: Path) -> Path:
    """
    Write comparison.csv with columns metric, controller, value.

    Raises:
        OutputError: If the file cannot be written
    """
    def write(f) -> None:
        writer = csv.DictWriter(f, fieldnames=["metric", "controller", "value"], lineterminator="\n")
        writer.writeheader()
        for row in comparison_rows(reports):
            writer.writerow({**row, "value": f"{row['value']:.9g}"})

    path = Path(path)
    atomic_write(path, write)
    return path


def read_trajectory(path: Path) -> Tuple[np.ndarray, List[str], np.ndarray]:
    """
    Read a trajectory.csv file.

    Returns:
        (time, column names without time, data)

    Raises:
        OutputError: If the file is missing or malformed
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip().split(",")
            table = np.loadtxt(f, delimiter=",", ndmin=2)
    except FileNotFoundError:
        raise OutputError("trajectory not found", path) from None
    except (OSError, ValueError) as e:
        raise OutputError(f"invalid trajectory ({e})", path) from e
    if not header or header[0] != "time" or table.shape[1] != len(header):
        raise OutputError("trajectory header does not match its data", path)
    return table[:, 0], header[1:], table[:, 1:]


def load_run(run_dir: Path) -> Tuple[Trajectory, RunRecord]:
    """Trajectory and record of a finished run directory."""
    run_dir = Path(run_dir)
    record = RunRecord.load(run_dir / META_FILE)
    time, columns, data = read_trajectory(run_dir / TRAJECTORY_FILE)
    generators = [c.split(".", 1)[1] for c in columns if c.startswith("p_e.")]
    areas = [c.split(".", 1)[1] for c in columns if c.startswith("z_r.")]
    metadata = {
        "scenario": record.scenario_name,
        "controller": record.controller,
        "seed": record.seed,
        "record_dt": record.solver.get("record_dt"),
        "horizon": record.solver.get("horizon"),
        "generators": generators,
        "areas": areas,
    }
    return Trajectory(time=time, columns=columns, data=data, metadata=metadata), record
