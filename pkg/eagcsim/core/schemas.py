"""
Pydantic schemas for scenario documents, configuration and result data.

This module defines the data structures read from scenario files and the
application config, with validation, type hints and sensible defaults.
Cross-references between sections (bus, generator, load and area ids) are
checked by the scenario loader after schema validation.
"""

from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


DEFAULT_BUS_CAPACITANCE = 1.0e-3
STEP_TOLERANCE = 1e-9


class LogLevel(str, Enum):
    """Logging levels."""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class ControllerKind(str, Enum):
    """Frequency controllers available to a run."""
    PRIMARY = "primary"
    CONVENTIONAL = "conventional"
    EAGC = "eagc"


class DisturbanceKind(str, Enum):
    """Shapes of exogenous disturbance signals."""
    STEP = "step"
    SINUSOID = "sinusoid"
    FILTERED_NOISE = "filtered-noise"


class InitializationMode(str, Enum):
    """How the t = 0 state is constructed."""
    EQUILIBRIUM = "equilibrium"
    FLAT_SETTLE = "flat_settle"
    EXPLICIT = "explicit"


class NetworkModel(str, Enum):
    """Treatment of the load, line and capacitor currents and voltages."""
    DYNAMIC = "dynamic"
    QUASI_STATIC = "quasi_static"


_SCENARIO_MODEL = ConfigDict(extra="forbid", frozen=True)


def _finite(**kwargs) -> Field:  # type: ignore[valid-type]
    return Field(allow_inf_nan=False, **kwargs)


def integer_ratio(numerator: float, denominator: float) -> Optional[int]:
    """
    Return numerator/denominator when it is a positive integer.

    Args:
        numerator: Longer interval
        denominator: Shorter interval

    Returns:
        The integer ratio, or None when the ratio is not integral
    """
    ratio = numerator / denominator
    nearest = int(round(ratio))
    if nearest < 1 or abs(ratio - nearest) > STEP_TOLERANCE * max(1.0, ratio):
        return None
    return nearest


class GeneratorParams(BaseModel):
    """Machine, turbine and governor constants of a non-reheat generator."""

    inertia: float = _finite(gt=0, description="Inertia M (s*pu)")
    damping: float = _finite(ge=0, description="Damping D (pu/pu-freq)")
    turbine_gain: float = _finite(gt=0, description="Turbine gain K_t (pu)")
    turbine_time_constant: float = _finite(gt=0, description="Turbine time constant T_u (s)")
    governor_time_constant: float = _finite(gt=0, description="Governor time constant T_g (s)")
    droop: float = _finite(gt=0, description="Droop r (pu-freq/pu-power)")
    omega_0: float = _finite(default=1.0, gt=0, description="Rated angular velocity (pu)")
    omega_ref: float = _finite(default=1.0, gt=0, description="Governor speed setpoint (pu)")
    p_m_ref: float = _finite(default=0.0, description="Mechanical power setpoint (pu)")
    u_max: float = _finite(gt=0, description="Control saturation limit (pu)")
    valve_min: Optional[float] = _finite(default=None, description="Lower valve limit (pu)")
    valve_max: Optional[float] = _finite(default=None, description="Upper valve limit (pu)")

    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        json_schema_extra={
            "example": {
                "inertia": 10.0,
                "damping": 1.0,
                "turbine_gain": 1.0,
                "turbine_time_constant": 0.2,
                "governor_time_constant": 0.1,
                "droop": 0.05,
                "p_m_ref": 0.2,
                "u_max": 0.1,
            }
        },
    )

    @model_validator(mode='after')
    def validate_valve_range(self) -> 'GeneratorParams':
        """Valve limits, when both are given, must form a proper interval."""
        if self.valve_min is not None and self.valve_max is not None:
            if self.valve_min >= self.valve_max:
                raise ValueError("valve_min must be smaller than valve_max")
        return self

    @property
    def droop_gain(self) -> float:
        """Steady-state power change per unit of control input, K_t / r."""
        return self.turbine_gain / self.droop


class LoadParams(BaseModel):
    """Series R-L load in the network dq frame."""

    resistance: float = _finite(gt=0, description="Resistance R_L (pu)")
    inductance: float = _finite(gt=0, description="Inductance L_L (pu*s)")

    model_config = _SCENARIO_MODEL


class LineParams(BaseModel):
    """Series R-L transmission line between two buses."""

    resistance: float = _finite(gt=0, description="Resistance R_TL (pu)")
    inductance: float = _finite(gt=0, description="Inductance L_TL (pu*s)")
    from_bus: str = Field(..., min_length=1, description="Bus the positive current leaves")
    to_bus: str = Field(..., min_length=1, description="Bus the positive current enters")

    model_config = _SCENARIO_MODEL

    @model_validator(mode='after')
    def validate_endpoints(self) -> 'LineParams':
        """A line must join two different buses."""
        if self.from_bus == self.to_bus:
            raise ValueError(f"line joins bus '{self.from_bus}' to itself")
        return self


class BusSpec(BaseModel):
    """Bus record: attached generator and load, voltage or shunt capacitance."""

    generator: Optional[str] = Field(default=None, description="Generator id at this bus")
    load: Optional[str] = Field(default=None, description="Load id at this bus")
    voltage: float = _finite(
        default=1.0, gt=0, description="Fixed voltage magnitude V_g of a generator bus (pu)"
    )
    capacitance: Optional[float] = _finite(
        default=None, gt=0, description="Shunt capacitance C_b of a non-generator bus (pu*s)"
    )
    area: Optional[str] = Field(default=None, description="Area of a non-generator bus")

    model_config = _SCENARIO_MODEL

    @model_validator(mode='after')
    def validate_kind(self) -> 'BusSpec':
        """Capacitance only applies where the voltage is a state."""
        if self.generator is not None and self.capacitance is not None:
            raise ValueError("capacitance applies only to non-generator buses")
        return self

    @property
    def effective_capacitance(self) -> float:
        """Capacitance with the documented default applied."""
        return self.capacitance if self.capacitance is not None else DEFAULT_BUS_CAPACITANCE


class NetworkSection(BaseModel):
    """Topology: buses, lines and frame settings."""

    base_angular_frequency: float = _finite(
        default=1.0,
        gt=0,
        description="Frame speed per pu of omega_0 (rad/s); omega*L is then the reactance",
    )
    voltage_limit: float = _finite(default=1.5, gt=0, description="Voltage magnitude bound V_max (pu)")
    dynamics: NetworkModel = Field(
        default=NetworkModel.DYNAMIC,
        description="dynamic: network states integrated; quasi_static: solved algebraically at every evaluation",
    )
    buses: Dict[str, BusSpec] = Field(..., min_length=1)
    lines: Dict[str, LineParams] = Field(default_factory=dict)

    model_config = _SCENARIO_MODEL


class AreaSpec(BaseModel):
    """Control area membership."""

    generators: List[str] = Field(..., min_length=1)

    model_config = _SCENARIO_MODEL


class DisturbanceSpec(BaseModel):
    """Exogenous disturbance attached to a bus or to a load's bus."""

    target: str = Field(..., min_length=1, description="Bus id or load id")
    kind: DisturbanceKind
    amplitude: float = _finite(description="Amplitude (pu); noise standard deviation for filtered-noise")
    start: float = _finite(default=0.0, ge=0, description="Start time (s)")
    frequency: Optional[float] = _finite(default=None, gt=0, description="Sinusoid frequency (Hz)")
    corner_frequency: Optional[float] = _finite(default=None, gt=0, description="Noise low-pass corner (Hz)")
    seed: Optional[int] = Field(default=None, ge=0, description="Noise seed")
    offset: float = _finite(default=0.0, description="Constant added after start (pu)")
    sample_interval: float = _finite(default=0.01, gt=0, description="Noise sample spacing (s)")

    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        json_schema_extra={
            "example": {
                "target": "bus3",
                "kind": "filtered-noise",
                "amplitude": 0.03,
                "offset": -0.2,
                "start": 1.0,
                "corner_frequency": 1.0,
                "seed": 3,
            }
        },
    )

    @model_validator(mode='after')
    def validate_kind_fields(self) -> 'DisturbanceSpec':
        """Each kind carries its own mandatory fields."""
        if self.kind == DisturbanceKind.SINUSOID and self.frequency is None:
            raise ValueError("sinusoid disturbance requires 'frequency'")
        if self.kind == DisturbanceKind.FILTERED_NOISE:
            if self.corner_frequency is None:
                raise ValueError("filtered-noise disturbance requires 'corner_frequency'")
            if self.seed is None:
                raise ValueError("filtered-noise disturbance requires 'seed'")
        return self


class LqrWeights(BaseModel):
    """LQR weights of one coordination layer: scalar Q and diagonal R."""

    q: float = _finite(description="State weight Q")
    r: List[float] = Field(..., min_length=1, description="Diagonal of R, one entry per participant")

    model_config = _SCENARIO_MODEL

    @field_validator('r')
    @classmethod
    def validate_finite(cls, v: List[float]) -> List[float]:
        """Weights must be finite numbers; positivity is checked separately."""
        if any(x != x or x in (float('inf'), float('-inf')) for x in v):
            raise ValueError("R entries must be finite")
        return v


class EagcSection(BaseModel):
    """Enhanced AGC settings."""

    area_weights: Dict[str, LqrWeights] = Field(
        default_factory=dict, description="Per-area weights (default Q=1, R=identity)"
    )
    system_weights: Optional[LqrWeights] = Field(
        default=None, description="Coordinator weights (default Q=1, R=identity)"
    )
    area_participation: Dict[str, List[float]] = Field(
        default_factory=dict, description="Split of an area's system share (default equal)"
    )

    model_config = _SCENARIO_MODEL


class ConventionalAreaSection(BaseModel):
    """Conventional AGC settings of one area."""

    frequency_bias: Optional[float] = _finite(default=None, gt=0, description="B_bias (default sum of 1/r)")
    participation: Optional[List[float]] = Field(default=None, description="Per-generator factors")
    tie_schedule: Optional[float] = _finite(default=None, description="Scheduled export (default t=0 value)")

    model_config = _SCENARIO_MODEL


class ConventionalSection(BaseModel):
    """Conventional ACE-based AGC settings."""

    integral_gain: float = _finite(default=0.1, gt=0, description="K_I (1/s)")
    areas: Dict[str, ConventionalAreaSection] = Field(default_factory=dict)

    model_config = _SCENARIO_MODEL


class ControllerSection(BaseModel):
    """Controller selection and per-controller settings."""

    selection: ControllerKind = ControllerKind.EAGC
    eagc: EagcSection = Field(default_factory=EagcSection)
    conventional: ConventionalSection = Field(default_factory=ConventionalSection)

    model_config = _SCENARIO_MODEL


class SolverConfig(BaseModel):
    """Fixed-step integration, control and recording intervals."""

    dt: float = _finite(default=2.0e-4, gt=0, description="Integration step (s)")
    horizon: float = _finite(gt=0, description="Simulated duration (s)")
    control_dt: float = _finite(default=0.01, gt=0, description="Controller update interval (s)")
    record_dt: float = _finite(default=0.01, gt=0, description="Output decimation interval (s)")
    seed: int = Field(default=0, ge=0, description="Run seed combined with disturbance seeds")

    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        json_schema_extra={
            "example": {"dt": 2.0e-4, "horizon": 40.0, "control_dt": 0.01, "record_dt": 0.01}
        },
    )

    @model_validator(mode='after')
    def validate_intervals(self) -> 'SolverConfig':
        """0 < dt <= control_dt <= record_dt <= horizon, on a common step grid."""
        if not self.dt <= self.control_dt <= self.record_dt <= self.horizon:
            raise ValueError(
                "intervals must satisfy dt <= control_dt <= record_dt <= horizon "
                f"(got {self.dt}, {self.control_dt}, {self.record_dt}, {self.horizon})"
            )
        if integer_ratio(self.control_dt, self.dt) is None:
            raise ValueError("control_dt must be an integer multiple of dt")
        if integer_ratio(self.record_dt, self.dt) is None:
            raise ValueError("record_dt must be an integer multiple of dt")
        return self

    @property
    def control_steps(self) -> int:
        """Integration steps per controller update."""
        return integer_ratio(self.control_dt, self.dt) or 1

    @property
    def record_steps(self) -> int:
        """Integration steps per recorded sample."""
        return integer_ratio(self.record_dt, self.dt) or 1

    @property
    def total_steps(self) -> int:
        """Integration steps covering the horizon."""
        return int(self.horizon / self.dt + STEP_TOLERANCE)


class GeneratorInit(BaseModel):
    """Explicit generator state; omega defaults to omega_ref."""

    delta: float = _finite(default=0.0)
    omega: Optional[float] = _finite(default=None)
    p_m: float = _finite(default=0.0)
    a: float = _finite(default=0.0)

    model_config = _SCENARIO_MODEL


class ExplicitState(BaseModel):
    """Explicit t = 0 values; missing entries default to zero."""

    generators: Dict[str, GeneratorInit] = Field(default_factory=dict)
    loads: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    lines: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    buses: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    z_c: Dict[str, float] = Field(default_factory=dict)
    z_r: Dict[str, float] = Field(default_factory=dict)
    z_s: float = 0.0

    model_config = _SCENARIO_MODEL


class InitializationSection(BaseModel):
    """Initial-state construction."""

    mode: InitializationMode = InitializationMode.EQUILIBRIUM
    settle_time: float = _finite(default=5.0, gt=0, description="flat_settle duration (s)")
    angles: Dict[str, float] = Field(default_factory=dict, description="Initial rotor angles (rad)")
    state: Optional[ExplicitState] = None

    model_config = _SCENARIO_MODEL

    @model_validator(mode='after')
    def validate_state(self) -> 'InitializationSection':
        """Explicit mode needs the explicit values."""
        if self.mode == InitializationMode.EXPLICIT and self.state is None:
            raise ValueError("initialization mode 'explicit' requires 'state'")
        return self


class ScenarioMetadata(BaseModel):
    """Descriptive header of a scenario."""

    name: str = Field(..., min_length=1)
    description: str = ""
    base_power_mva: float = _finite(default=25.0, gt=0)
    base_frequency_hz: float = _finite(default=50.0, gt=0)
    notes: str = ""

    model_config = _SCENARIO_MODEL


class ScenarioDocument(BaseModel):
    """Complete scenario: topology, parameters, disturbances, controller, solver."""

    version: int = Field(default=1, description="Scenario format version")
    metadata: ScenarioMetadata
    network: NetworkSection
    generators: Dict[str, GeneratorParams] = Field(..., min_length=1)
    loads: Dict[str, LoadParams] = Field(default_factory=dict)
    areas: Dict[str, AreaSpec] = Field(..., min_length=1)
    disturbances: List[DisturbanceSpec] = Field(default_factory=list)
    controller: ControllerSection = Field(default_factory=ControllerSection)
    solver: SolverConfig
    initialization: InitializationSection = Field(default_factory=InitializationSection)

    model_config = _SCENARIO_MODEL

    def area_of(self, generator_id: str) -> str:
        """Area id of a generator."""
        for area_id, area in self.areas.items():
            if generator_id in area.generators:
                return area_id
        raise KeyError(generator_id)


class GeneratorMetrics(BaseModel):
    """Per-generator trajectory metrics."""

    generator: str
    steady_state_error: float = Field(..., description="Mean omega - omega_ref over final 20% (pu)")
    settling_time: float = Field(..., ge=0, description="Last exit of the 2e-3 pu band (s)")
    oscillation_amplitude: float = Field(..., ge=0, description="Peak amplitude in 0.1-5 Hz (pu)")
    dominant_frequency: float = Field(..., ge=0, description="Frequency of that peak (Hz)")
    band_energy: float = Field(..., ge=0, description="Power in 0.1-5 Hz (pu^2)")
    control_cost: float = Field(..., ge=0, description="Integral of w*u^2 (pu^2*s)")
    coordination_share: float = Field(..., ge=0, description="Share of the area's integral of u_r^2")


class SystemMetrics(BaseModel):
    """System row of the metrics table."""

    steady_state_error: float = Field(..., ge=0, description="Largest |steady-state error| (pu)")
    settling_time: float = Field(..., ge=0)
    oscillation_amplitude: float = Field(..., ge=0)
    band_energy: float = Field(..., ge=0)
    control_cost: float = Field(..., ge=0)
    interarea_intv_rms: float = Field(..., ge=0, description="RMS of area IntVs (pu*s)")


class MetricsReport(BaseModel):
    """Metrics of one run."""

    controller: str
    window_s: float = Field(..., ge=0, description="Post-disturbance window used for spectra (s)")
    generators: List[GeneratorMetrics]
    system: SystemMetrics


class AppConfigSchema(BaseModel):
    """Application-wide configuration."""

    version: int = Field(default=1, description="Configuration version")

    # Paths configuration
    scenarios_path: Path = Field(default=Path("scenarios"), description="Scenario directory")
    runs_path: Path = Field(default=Path("runs"), description="Default output directory")

    # Execution
    max_workers: int = Field(default=3, ge=1, description="Parallel runs in compare mode")

    # Logging configuration
    log_level: LogLevel = Field(default=LogLevel.INFO, description="Logging level")
    log_format: str = Field(default="text", description="Log format")
    log_output_path: Optional[Path] = Field(default=None, description="Log output directory")

    model_config = {
        "json_schema_extra": {
            "example": {
                "version": 1,
                "max_workers": 3,
                "log_level": "INFO",
                "log_format": "text",
            }
        }
    }

    @field_validator('log_format')
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        """Only json and text renderers exist."""
        if v not in ("json", "text"):
            raise ValueError("log_format must be 'json' or 'text'")
        return v
