"""
Fixed-step simulation of a scenario under a selected controller.

The loop integrates the system derivative with classical RK4, updates the
controller every ``control_dt`` (zero-order hold in between) and records the
state plus controller signals every ``record_dt``.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .control import ControlAction, ControllerKind, build_controller, stability_condition
from .disturbances import DisturbanceField
from .errors import ContractViolation, ModelDomainError, SimulationDivergenceError
from .intv import component_intv_rate
from .network import Network
from .schemas import InitializationMode, NetworkModel, ScenarioDocument

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1.0e6
GENERATOR_SIGNALS = (
    "p_e", "u", "u_c", "u_r", "u_s", "saturated", "intv_rate", "intv_residual", "stability_margin",
)
AREA_SIGNALS = ("tie", "ace")

StateLike = Union[float, np.ndarray]


def rk4_step(
    f: Callable[[float, np.ndarray], np.ndarray], x: StateLike, t: float, dt: float
) -> StateLike:
    """
    Classical fourth-order Runge-Kutta step.

    Args:
        f: Derivative function f(t, x)
        x: State at ``t`` (scalar or array)
        t: Time (s)
        dt: Step (s)

    Returns:
        State at t + dt

    Raises:
        ContractViolation: If dt is not positive
        SimulationDivergenceError: If a stage or the result is not finite
    """
    if not dt > 0:
        raise ContractViolation(f"dt must be positive (got {dt})")
    x = np.asarray(x, dtype=float)
    half = 0.5 * dt
    k1 = np.asarray(f(t, x), dtype=float)
    k2 = np.asarray(f(t + half, x + half * k1), dtype=float)
    k3 = np.asarray(f(t + half, x + half * k2), dtype=float)
    k4 = np.asarray(f(t + dt, x + dt * k3), dtype=float)
    result = x + dt * ((k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0)
    if not np.all(np.isfinite(result)):
        raise SimulationDivergenceError("non-finite state", time=t)
    return float(result) if result.ndim == 0 else result


@dataclass
class Trajectory:
    """Recorded run: uniform time grid and one column per signal."""

    time: np.ndarray
    columns: List[str]
    data: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def series(self, name: str) -> np.ndarray:
        """Column by fully qualified name."""
        try:
            return self.data[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(f"no recorded signal '{name}'") from None

    def states(self) -> np.ndarray:
        """(records x state size) block of the recorded system states."""
        return self.data[:, : self.metadata["state_size"]]

    @property
    def generator_ids(self) -> List[str]:
        return list(self.metadata["generators"])

    @property
    def area_ids(self) -> List[str]:
        return list(self.metadata["areas"])

    def __len__(self) -> int:
        return int(self.time.size)


def integrate(
    network: Network,
    x0: np.ndarray,
    duration: float,
    dt: float,
    u: Optional[np.ndarray] = None,
    disturbances: Optional[DisturbanceField] = None,
    t0: float = 0.0,
) -> np.ndarray:
    """
    Integrate with a constant control input and return the final state.

    Raises:
        SimulationDivergenceError: If the state leaves the admissible region
    """
    u = np.zeros(len(network.generator_ids)) if u is None else np.asarray(u, dtype=float)
    steps = int(round(duration / dt))
    x = np.array(x0, dtype=float)

    def deriv(t: float, state: np.ndarray) -> np.ndarray:
        g = None if disturbances is None else disturbances.conductance(t)
        return network.system_deriv(state, u, g, t)

    for k in range(steps):
        t = t0 + k * dt
        x = _checked_step(network, deriv, x, t, dt)
    return x


def _checked_step(network: Network, deriv, x: np.ndarray, t: float, dt: float) -> np.ndarray:
    try:
        x = rk4_step(deriv, x, t, dt)
    except ModelDomainError as e:
        raise SimulationDivergenceError(str(e), time=t, component=e.component) from e
    peak = int(np.argmax(np.abs(x)))
    if abs(x[peak]) > DIVERGENCE_LIMIT:
        raise SimulationDivergenceError(
            f"|state| exceeded {DIVERGENCE_LIMIT:g} in '{network.layout.name_of(peak)}'",
            time=t + dt,
            component=network.layout.component_of(peak),
        )
    return x


def initial_state(
    scenario: ScenarioDocument,
    dynamics: Optional[NetworkModel] = None,
) -> Tuple[Network, np.ndarray]:
    """
    Build the network and the t = 0 state.

    ``equilibrium`` solves the network at the configured angles and dispatches
    P_m_ref so every generator is balanced; ``flat_settle`` integrates from
    rest without control or disturbance; ``explicit`` packs given values.
    Disturbances never take part in the construction. IntV states start at 0.
    ``dynamics`` overrides the network treatment of the scenario.

    Returns:
        (network, state); the network carries the effective setpoints
    """
    init = scenario.initialization
    network = Network(scenario, dynamics=dynamics)
    layout = network.layout
    bank = network.bank

    x = layout.zeros()
    gen = x[layout.generators].reshape(-1, 4)
    gen[:, 0] = [init.angles.get(g, 0.0) for g in network.generator_ids]
    gen[:, 1] = bank.omega_ref
    x[layout.generators] = gen.ravel()

    if init.mode == InitializationMode.EQUILIBRIUM:
        x = network.solve_network_equilibrium(x)
        p_e = network.electrical_powers(x)
        p_m_ref = p_e + bank.damping * (bank.omega_ref - bank.omega_0)
        network = Network(scenario, bank=bank.with_setpoints(p_m_ref), dynamics=network.dynamics)
        logger.info(
            "Equilibrium dispatch: %s",
            ", ".join(f"{g}={p:.4f}" for g, p in zip(network.generator_ids, p_m_ref)),
        )
    elif init.mode == InitializationMode.FLAT_SETTLE:
        x = integrate(network, x, init.settle_time, scenario.solver.dt)
        x[layout.z_c.start:] = 0.0
        logger.info("Settled from rest for %.3gs", init.settle_time)
    else:
        state = init.state
        explicit = x.copy()
        for gen_id, values in state.generators.items():
            k = network.generator_index(gen_id)
            omega = bank.omega_ref[k] if values.omega is None else values.omega
            explicit[layout.generators.start + 4 * k: layout.generators.start + 4 * k + 4] = (
                values.delta, omega, values.p_m, values.a,
            )
        for ids, span, values in (
            (layout.load_ids, layout.loads, state.loads),
            (layout.line_ids, layout.lines, state.lines),
            (layout.capacitor_bus_ids, layout.buses, state.buses),
        ):
            for item, pair in values.items():
                k = ids.index(item)
                explicit[span.start + 2 * k: span.start + 2 * k + 2] = pair
        for gen_id, value in state.z_c.items():
            explicit[layout.z_c.start + network.generator_index(gen_id)] = value
        for area_id, value in state.z_r.items():
            explicit[layout.z_r.start + layout.area_ids.index(area_id)] = value
        explicit[layout.z_s] = state.z_s
        x = explicit
    return network, network.consistent_state(x)


def column_names(network: Network) -> List[str]:
    """Recorded columns: state entries, then per-generator and per-area signals."""
    names = network.layout.names()
    for signal in GENERATOR_SIGNALS:
        names.extend(f"{signal}.{g}" for g in network.generator_ids)
    for signal in AREA_SIGNALS:
        names.extend(f"{signal}.{a}" for a in network.area_ids)
    return names


class SampledDisturbances:
    """
    Disturbance conductances on the half-step grid of a fixed-step run.

    Values are sampled one block of grid points at a time, so every RK4 stage
    is a table lookup and memory stays bounded for long horizons.
    """

    BLOCK = 8192

    def __init__(self, field_: DisturbanceField, dt: float, n_buses: int):
        self.field = field_
        self.dt = dt
        self._zeros = np.zeros(n_buses)
        self._start = 0
        self._values = np.empty((0, n_buses))

    def __call__(self, t: float) -> np.ndarray:
        if not self.field.active:
            return self._zeros
        index = int(round(2.0 * t / self.dt))
        offset = index - self._start
        if not 0 <= offset < self._values.shape[0]:
            self._start, offset = index, 0
            grid = (index + np.arange(self.BLOCK)) * (0.5 * self.dt)
            self._values = self.field.conductance_grid(grid)
        return self._values[offset]


def run_scenario(
    scenario: ScenarioDocument,
    controller: Optional[Union[ControllerKind, str]] = None,
    disturbances_enabled: bool = True,
    dynamics: Optional[Union[NetworkModel, str]] = None,
) -> Trajectory:
    """
    Simulate a scenario.

    Disturbances are sampled on the grid of RK4 stage times (every half step)
    in blocks ahead of the integration.

    Args:
        scenario: Validated scenario
        controller: Controller selection (defaults to the scenario's)
        disturbances_enabled: False runs the same scenario without disturbances
        dynamics: Network treatment (defaults to the scenario's)

    Returns:
        Trajectory sampled every record_dt

    Raises:
        SimulationDivergenceError: If the state diverges
        WeightsError: If E-AGC weights are invalid
    """
    kind = ControllerKind(controller or scenario.controller.selection)
    solver = scenario.solver
    network, x = initial_state(scenario, None if dynamics is None else NetworkModel(dynamics))
    field_ = DisturbanceField.for_network(
        network, scenario.disturbances, solver.seed, enabled=disturbances_enabled
    )
    ctrl = build_controller(kind, network, scenario)

    bank = network.bank
    layout = network.layout
    n_gen = len(network.generator_ids)
    dt = solver.dt
    control_steps = solver.control_steps
    record_steps = solver.record_steps
    total_steps = solver.total_steps
    columns = column_names(network)
    n_records = total_steps // record_steps + 1
    data = np.empty((n_records, len(columns)))
    times = np.arange(n_records) * record_steps * dt

    conductance = SampledDisturbances(field_, dt, len(network.bus_ids))

    x = network.consistent_state(x, conductance(0.0))
    ctrl.reset(x)

    logger.info(
        "Running '%s' with %s control and %s network: %d steps of %gs",
        scenario.metadata.name, kind.value, network.dynamics.value, total_steps, dt,
    )

    action: Optional[ControlAction] = None
    residual = np.zeros(n_gen)
    violated = np.zeros(n_gen, dtype=bool)
    held_u = np.zeros(n_gen)

    def deriv(t: float, state: np.ndarray) -> np.ndarray:
        return network.system_deriv(state, held_u, conductance(t), t)

    started = time.perf_counter()
    row = 0
    for k in range(total_steps + 1):
        t = k * dt
        if k % control_steps == 0:
            p_e = network.electrical_powers(x, conductance(t))
            action = ctrl.update(t, x, p_e)
            held_u = action.u
            residual = np.atleast_1d(component_intv_rate(bank.p_m_ref, p_e, action.u_c, bank))
            satisfied, _ = stability_condition(p_e, bank.p_m_ref, bank)
            for i in np.flatnonzero(~satisfied & ~violated):
                logger.warning(
                    "Stability condition violated for generator %s at t=%.4gs",
                    network.generator_ids[i], t,
                )
            violated |= ~satisfied

        if k % record_steps == 0:
            p_e_now = network.electrical_powers(x, conductance(t))
            _, margin = stability_condition(p_e_now, bank.p_m_ref, bank)
            intv_rate = component_intv_rate(bank.p_m_ref, p_e_now, action.u, bank)
            data[row] = np.concatenate([
                x,
                p_e_now,
                action.u,
                action.u_c,
                action.u_r,
                action.u_s,
                action.saturated.astype(float),
                intv_rate,
                residual,
                margin,
                network.tie_flows(x),
                action.ace,
            ])
            row += 1

        if k == total_steps:
            break
        x = _checked_step(network, deriv, x, t, dt)
        if network.quasi_static:
            x = network.consistent_state(x, conductance(t + dt))

    wall = time.perf_counter() - started
    logger.info("Run finished in %.2fs (%.0f steps/s)", wall, total_steps / max(wall, 1e-9))

    metadata = {
        "scenario": scenario.metadata.name,
        "controller": kind.value,
        "network_dynamics": network.dynamics.value,
        "seed": solver.seed,
        "dt": dt,
        "control_dt": solver.control_dt,
        "record_dt": solver.record_dt,
        "horizon": solver.horizon,
        "state_size": layout.size,
        "generators": list(network.generator_ids),
        "areas": list(network.area_ids),
        "area_of": {g: scenario.area_of(g) for g in network.generator_ids},
        "omega_ref": bank.omega_ref.tolist(),
        "p_m_ref": bank.p_m_ref.tolist(),
        "last_disturbance_start": field_.last_start if field_.active else 0.0,
        "stability_violations": [g for g, v in zip(network.generator_ids, violated) if v],
        "wall_time_s": wall,
        "steps": total_steps,
    }
    return Trajectory(time=times[:row], columns=columns, data=data[:row], metadata=metadata)
