"""
Component models: non-reheat generator, series R-L load and R-L line.

The derivative functions are pure. The ``*_rates`` variants operate on numpy
arrays and broadcast over any parameter object exposing the same attribute
names as the pydantic schemas, so the network assembly evaluates a whole bank
of generators or branches in one call.
"""

from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import ModelDomainError
from .schemas import GeneratorParams, LineParams, LoadParams


class DqCurrent(NamedTuple):
    """d-q axis current pair (pu)."""
    i_d: float
    i_q: float

    @property
    def magnitude(self) -> float:
        return float(np.hypot(self.i_d, self.i_q))


class DqVoltage(NamedTuple):
    """d-q axis voltage pair (pu)."""
    v_d: float
    v_q: float

    @property
    def magnitude(self) -> float:
        return float(np.hypot(self.v_d, self.v_q))


@dataclass(frozen=True)
class GeneratorState:
    """Rotor angle, speed, mechanical power and valve position of one generator."""

    delta: float
    omega: float
    p_m: float
    a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.omega, self.p_m, self.a], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'GeneratorState':
        delta, omega, p_m, a = (float(v) for v in values)
        return cls(delta=delta, omega=omega, p_m=p_m, a=a)


@dataclass(frozen=True)
class GeneratorBank:
    """Generator constants stacked into arrays, ordered like ``ids``."""

    ids: Tuple[str, ...]
    inertia: np.ndarray
    damping: np.ndarray
    turbine_gain: np.ndarray
    turbine_time_constant: np.ndarray
    governor_time_constant: np.ndarray
    droop: np.ndarray
    omega_0: np.ndarray
    omega_ref: np.ndarray
    p_m_ref: np.ndarray
    u_max: np.ndarray
    valve_min: np.ndarray
    valve_max: np.ndarray

    @classmethod
    def from_params(cls, items: Iterable[Tuple[str, GeneratorParams]]) -> 'GeneratorBank':
        """Stack per-generator parameters; absent valve limits become infinite."""
        pairs = list(items)
        params = [p for _, p in pairs]

        def column(name: str) -> np.ndarray:
            return np.array([getattr(p, name) for p in params], dtype=float)

        return cls(
            ids=tuple(gen_id for gen_id, _ in pairs),
            inertia=column("inertia"),
            damping=column("damping"),
            turbine_gain=column("turbine_gain"),
            turbine_time_constant=column("turbine_time_constant"),
            governor_time_constant=column("governor_time_constant"),
            droop=column("droop"),
            omega_0=column("omega_0"),
            omega_ref=column("omega_ref"),
            p_m_ref=column("p_m_ref"),
            u_max=column("u_max"),
            valve_min=np.array(
                [-np.inf if p.valve_min is None else p.valve_min for p in params]
            ),
            valve_max=np.array(
                [np.inf if p.valve_max is None else p.valve_max for p in params]
            ),
        )

    def with_setpoints(self, p_m_ref: np.ndarray) -> 'GeneratorBank':
        """Copy with new mechanical power setpoints."""
        return replace(self, p_m_ref=np.asarray(p_m_ref, dtype=float).copy())

    @property
    def droop_gain(self) -> np.ndarray:
        """K_t / r per generator."""
        return self.turbine_gain / self.droop

    def __len__(self) -> int:
        return len(self.ids)


def _valve_bounds(params) -> Tuple[np.ndarray, np.ndarray]:
    lo = getattr(params, "valve_min", None)
    hi = getattr(params, "valve_max", None)
    lo = -np.inf if lo is None else lo
    hi = np.inf if hi is None else hi
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def require_finite(component: str, *values) -> None:
    """
    Reject non-finite inputs.

    Raises:
        ModelDomainError: If any value contains NaN or infinity
    """
    for value in values:
        if not np.all(np.isfinite(value)):
            raise ModelDomainError("non-finite value", component=component)


def generator_rates(
    delta: np.ndarray,
    omega: np.ndarray,
    p_m: np.ndarray,
    a: np.ndarray,
    params,
    p_e: np.ndarray,
    u_agc: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Generator derivatives on arrays.

    The speed error in the angle and governor equations is taken against
    omega_ref, the damping term against omega_0.
    """
    d_delta = params.omega_0 * (omega - params.omega_ref)
    d_omega = (
        p_m + params.p_m_ref - params.damping * (omega - params.omega_0) - p_e
    ) / params.inertia
    d_p_m = (-p_m + params.turbine_gain * a) / params.turbine_time_constant
    d_a = (
        -params.droop * a - (omega - params.omega_ref) + u_agc
    ) / params.governor_time_constant

    lo, hi = _valve_bounds(params)
    pinned = ((a <= lo) & (d_a < 0)) | ((a >= hi) & (d_a > 0))
    d_a = np.where(pinned, 0.0, d_a)
    return d_delta, d_omega, d_p_m, d_a


def branch_rates(
    i_d: np.ndarray,
    i_q: np.ndarray,
    v_d: np.ndarray,
    v_q: np.ndarray,
    resistance: np.ndarray,
    inductance: np.ndarray,
    omega: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Series R-L branch in a frame rotating at ``omega``, driven by (v_d, v_q)."""
    d_i_d = (-resistance * i_d + omega * inductance * i_q + v_d) / inductance
    d_i_q = (-resistance * i_q - omega * inductance * i_d + v_q) / inductance
    return d_i_d, d_i_q


def generator_deriv(
    state: GeneratorState, params: GeneratorParams, p_e: float, u_agc: float
) -> GeneratorState:
    """
    Evaluate the swing, turbine and governor equations of one generator.

    Args:
        state: Current generator state
        params: Generator constants
        p_e: Electrical power output (pu)
        u_agc: Total secondary control input (pu)

    Returns:
        Time derivative packed as a GeneratorState

    Raises:
        ModelDomainError: If an input is not finite
    """
    require_finite("generator", state.as_array(), p_e, u_agc)
    rates = generator_rates(
        state.delta, state.omega, state.p_m, state.a, params, p_e, u_agc
    )
    return GeneratorState.from_array([float(r) for r in rates])


def load_deriv(
    state: DqCurrent, params: LoadParams, v: DqVoltage, omega: float
) -> DqCurrent:
    """
    Current derivative of a series R-L load.

    Args:
        state: Load current
        params: Load resistance and inductance
        v: Voltage of the load's bus
        omega: Frame angular speed

    Returns:
        Current derivative
    """
    require_finite("load", state, v, omega)
    d_i_d, d_i_q = branch_rates(
        state.i_d, state.i_q, v.v_d, v.v_q, params.resistance, params.inductance, omega
    )
    return DqCurrent(float(d_i_d), float(d_i_q))


def line_deriv(
    state: DqCurrent,
    params: LineParams,
    v_left: DqVoltage,
    v_right: DqVoltage,
    omega: float,
) -> DqCurrent:
    """
    Current derivative of a series R-L line.

    The port voltage difference v_left - v_right drives the current, which is
    positive from ``from_bus`` (left) to ``to_bus`` (right).
    """
    require_finite("line", state, v_left, v_right, omega)
    d_i_d, d_i_q = branch_rates(
        state.i_d,
        state.i_q,
        v_left.v_d - v_right.v_d,
        v_left.v_q - v_right.v_q,
        params.resistance,
        params.inductance,
        omega,
    )
    return DqCurrent(float(d_i_d), float(d_i_q))


def branch_current_bound(resistance: float, voltage_bound: float) -> float:
    """Largest current magnitude reachable from rest under |v| <= voltage_bound."""
    return voltage_bound / resistance
