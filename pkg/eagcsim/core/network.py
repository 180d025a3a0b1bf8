"""
Interconnected system assembly.

``Network`` turns a validated scenario into index arrays and incidence
matrices, resolves bus voltages, computes the electrical power couplings and
evaluates the full system derivative on a flat state vector laid out by
``StateLayout``.

Conventions:
    - Line current is positive from ``from_bus`` to ``to_bus``.
    - Generator bus voltage is V_g (cos delta, sin delta).
    - Non-generator buses carry a shunt capacitor whose dq voltage is a state.
    - A disturbance value at a bus draws the current g * v (signed conductance).
    - Quasi-static network dynamics keep the network states at their steady
      state for the present angles; the swing equations still see P_e.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .errors import ContractViolation, ModelDomainError
from .intv import layered_rates
from .models import DqCurrent, DqVoltage, GeneratorBank, GeneratorState, branch_rates, generator_rates
from .schemas import NetworkModel, ScenarioDocument

logger = logging.getLogger(__name__)

GENERATOR_FIELDS = ("delta", "omega", "p_m", "a")
DQ_CURRENT_FIELDS = ("i_d", "i_q")
DQ_VOLTAGE_FIELDS = ("v_d", "v_q")


def real_power(v: DqVoltage, i: DqCurrent) -> float:
    """Real power v_d*i_d + v_q*i_q."""
    return float(v.v_d * i.i_d + v.v_q * i.i_q)


def capacitor_voltage_rates(
    v_d: np.ndarray,
    v_q: np.ndarray,
    i_net_d: np.ndarray,
    i_net_q: np.ndarray,
    capacitance: np.ndarray,
    omega: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Shunt capacitor in a frame rotating at ``omega`` fed by the net injection."""
    d_v_d = (i_net_d + omega * capacitance * v_q) / capacitance
    d_v_q = (i_net_q - omega * capacitance * v_d) / capacitance
    return d_v_d, d_v_q


@dataclass
class SystemState:
    """Structured view of a flat state vector."""

    generators: Dict[str, GeneratorState] = field(default_factory=dict)
    loads: Dict[str, DqCurrent] = field(default_factory=dict)
    lines: Dict[str, DqCurrent] = field(default_factory=dict)
    buses: Dict[str, DqVoltage] = field(default_factory=dict)
    z_c: Dict[str, float] = field(default_factory=dict)
    z_r: Dict[str, float] = field(default_factory=dict)
    z_s: float = 0.0


class StateLayout:
    """
    Positions of every component inside the flat state vector.

    Order: generator blocks (delta, omega, p_m, a), load currents, line
    currents, capacitor bus voltages, z_c per generator, z_r per area, z_s.
    """

    def __init__(
        self,
        generator_ids: Sequence[str],
        load_ids: Sequence[str],
        line_ids: Sequence[str],
        capacitor_bus_ids: Sequence[str],
        area_ids: Sequence[str],
    ):
        self.generator_ids = tuple(generator_ids)
        self.load_ids = tuple(load_ids)
        self.line_ids = tuple(line_ids)
        self.capacitor_bus_ids = tuple(capacitor_bus_ids)
        self.area_ids = tuple(area_ids)

        offset = 0
        spans = []
        for count in (
            4 * len(self.generator_ids),
            2 * len(self.load_ids),
            2 * len(self.line_ids),
            2 * len(self.capacitor_bus_ids),
            len(self.generator_ids),
            len(self.area_ids),
            1,
        ):
            spans.append(slice(offset, offset + count))
            offset += count
        (
            self.generators,
            self.loads,
            self.lines,
            self.buses,
            self.z_c,
            self.z_r,
            self.z_s,
        ) = spans
        self.network = slice(self.loads.start, self.buses.stop)
        self.size = offset

        self._names: List[str] = []
        self._owners: List[str] = []
        self._add_block(self.generator_ids, "gen", GENERATOR_FIELDS)
        self._add_block(self.load_ids, "load", DQ_CURRENT_FIELDS)
        self._add_block(self.line_ids, "line", DQ_CURRENT_FIELDS)
        self._add_block(self.capacitor_bus_ids, "bus", DQ_VOLTAGE_FIELDS)
        for gen_id in self.generator_ids:
            self._names.append(f"z_c.{gen_id}")
            self._owners.append(gen_id)
        for area_id in self.area_ids:
            self._names.append(f"z_r.{area_id}")
            self._owners.append(area_id)
        self._names.append("z_s")
        self._owners.append("system")

    def _add_block(self, ids: Sequence[str], prefix: str, fields: Sequence[str]) -> None:
        for item in ids:
            for name in fields:
                self._names.append(f"{prefix}.{item}.{name}")
                self._owners.append(item)

    def names(self) -> List[str]:
        """Fully qualified column name of every state entry."""
        return list(self._names)

    def name_of(self, index: int) -> str:
        return self._names[index]

    def component_of(self, index: int) -> str:
        """Id of the component owning a state entry."""
        return self._owners[index]

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    def pack(self, state: SystemState) -> np.ndarray:
        """
        Flatten a SystemState; missing entries stay zero.

        Raises:
            ContractViolation: If the state names an unknown component
        """
        x = self.zeros()
        self._scatter(x, self.generators, 4, self.generator_ids,
                      {k: v.as_array() for k, v in state.generators.items()})
        self._scatter(x, self.loads, 2, self.load_ids, state.loads)
        self._scatter(x, self.lines, 2, self.line_ids, state.lines)
        self._scatter(x, self.buses, 2, self.capacitor_bus_ids, state.buses)
        self._scatter(x, self.z_c, 1, self.generator_ids,
                      {k: [v] for k, v in state.z_c.items()})
        self._scatter(x, self.z_r, 1, self.area_ids,
                      {k: [v] for k, v in state.z_r.items()})
        x[self.z_s] = state.z_s
        return x

    @staticmethod
    def _scatter(x: np.ndarray, span: slice, width: int, ids: Tuple[str, ...], values) -> None:
        for key, value in values.items():
            if key not in ids:
                raise ContractViolation(f"unknown component '{key}' in state")
            start = span.start + width * ids.index(key)
            x[start:start + width] = np.asarray(value, dtype=float)

    def unpack(self, x: np.ndarray) -> SystemState:
        """Structured view of a flat state vector."""
        self.check_shape(x)
        gen = x[self.generators].reshape(-1, 4)
        loads = x[self.loads].reshape(-1, 2)
        lines = x[self.lines].reshape(-1, 2)
        buses = x[self.buses].reshape(-1, 2)
        return SystemState(
            generators={g: GeneratorState.from_array(gen[k]) for k, g in enumerate(self.generator_ids)},
            loads={ld: DqCurrent(float(loads[k, 0]), float(loads[k, 1])) for k, ld in enumerate(self.load_ids)},
            lines={t: DqCurrent(float(lines[k, 0]), float(lines[k, 1])) for k, t in enumerate(self.line_ids)},
            buses={b: DqVoltage(float(buses[k, 0]), float(buses[k, 1]))
                   for k, b in enumerate(self.capacitor_bus_ids)},
            z_c={g: float(v) for g, v in zip(self.generator_ids, x[self.z_c])},
            z_r={a: float(v) for a, v in zip(self.area_ids, x[self.z_r])},
            z_s=float(x[self.z_s][0]),
        )

    def check_shape(self, x: np.ndarray) -> None:
        if np.shape(x) != (self.size,):
            raise ContractViolation(
                f"state has shape {np.shape(x)}, expected ({self.size},)"
            )


@dataclass(frozen=True)
class PowerBalance:
    """Instantaneous power bookkeeping of the network (pu)."""

    generation: float
    load_power: float
    disturbance_power: float
    line_dissipation: float
    line_storage_rate: float
    capacitor_storage_rate: float

    @property
    def residual(self) -> float:
        return self.generation - (
            self.load_power
            + self.disturbance_power
            + self.line_dissipation
            + self.line_storage_rate
            + self.capacitor_storage_rate
        )

    @property
    def relative_residual(self) -> float:
        scale = max(
            abs(self.generation),
            abs(self.load_power),
            abs(self.disturbance_power),
            abs(self.line_dissipation),
            abs(self.line_storage_rate),
            abs(self.capacitor_storage_rate),
            1e-300,
        )
        return abs(self.residual) / scale


@dataclass(frozen=True)
class SystemOperator:
    """
    The system derivative split into constant matrices.

    With vg the interleaved generator bus voltages and P_e the electrical
    powers, ``dx = a @ x + bias + b_v @ vg + w_pe @ P_e + w_u @ u`` plus the
    disturbance terms. ``delivery`` maps the network slice to the dq current
    leaving each generator bus, so P_e is the pairwise dot product of vg and
    ``delivery @ y``.
    """

    a: np.ndarray
    bias: np.ndarray
    b_v: np.ndarray
    w_pe: np.ndarray
    w_u: np.ndarray
    delivery: np.ndarray
    delta_index: np.ndarray
    valve_index: np.ndarray
    valve_min: np.ndarray
    valve_max: np.ndarray
    cap_rows: np.ndarray
    cap_row_bus: np.ndarray
    cap_row_inverse: np.ndarray

    @property
    def valve_limited(self) -> bool:
        return bool(np.isfinite(self.valve_min).any() or np.isfinite(self.valve_max).any())


def _assemble_operator(net: 'Network') -> SystemOperator:
    layout, bank = net.layout, net.bank
    n, n_gen = layout.size, len(net.generator_ids)
    w = net.frame_speed
    a = np.zeros((n, n))
    bias = np.zeros(n)
    b_v = np.zeros((n, 2 * n_gen))
    w_pe = np.zeros((n, n_gen))
    w_u = np.zeros((n, n_gen))

    gen_of_bus = {int(b): i for i, b in enumerate(net.gen_bus)}
    cap_of_bus = {int(b): c for c, b in enumerate(net.cap_bus)}

    def drive(row: int, bus: int, coef: float) -> None:
        # rows row, row+1 receive coef * (v_d, v_q) of the bus
        if bus in cap_of_bus:
            col = layout.buses.start + 2 * cap_of_bus[bus]
            a[row, col] += coef
            a[row + 1, col + 1] += coef
        else:
            col = 2 * gen_of_bus[bus]
            b_v[row, col] += coef
            b_v[row + 1, col + 1] += coef

    def branch(row: int, resistance: float, inductance: float) -> None:
        a[row, row] = a[row + 1, row + 1] = -resistance / inductance
        a[row, row + 1] = w
        a[row + 1, row] = -w

    for i in range(n_gen):
        d, o, p, v = (int(j) for j in layout.generators.start + 4 * i + np.arange(4))
        m = bank.inertia[i]
        a[d, o] = bank.omega_0[i]
        bias[d] = -bank.omega_0[i] * bank.omega_ref[i]
        a[o, o] = -bank.damping[i] / m
        a[o, p] = 1.0 / m
        bias[o] = (bank.p_m_ref[i] + bank.damping[i] * bank.omega_0[i]) / m
        w_pe[o, i] = -1.0 / m
        a[p, p] = -1.0 / bank.turbine_time_constant[i]
        a[p, v] = bank.turbine_gain[i] / bank.turbine_time_constant[i]
        a[v, v] = -bank.droop[i] / bank.governor_time_constant[i]
        a[v, o] = -1.0 / bank.governor_time_constant[i]
        bias[v] = bank.omega_ref[i] / bank.governor_time_constant[i]
        w_u[v, i] = 1.0 / bank.governor_time_constant[i]

    for k in range(len(net.load_ids)):
        row = layout.loads.start + 2 * k
        branch(row, net.load_resistance[k], net.load_inductance[k])
        drive(row, int(net.load_bus[k]), 1.0 / net.load_inductance[k])

    for k in range(len(net.line_ids)):
        row = layout.lines.start + 2 * k
        branch(row, net.line_resistance[k], net.line_inductance[k])
        drive(row, int(net.line_from[k]), 1.0 / net.line_inductance[k])
        drive(row, int(net.line_to[k]), -1.0 / net.line_inductance[k])

    # current leaving each bus into lines and its load, as columns over the state
    leaving = np.zeros((len(net.bus_ids), 2, n))
    for k in range(len(net.line_ids)):
        col = layout.lines.start + 2 * k
        for bus, sign in ((net.line_from[k], 1.0), (net.line_to[k], -1.0)):
            leaving[bus, 0, col] += sign
            leaving[bus, 1, col + 1] += sign
    for k in range(len(net.load_ids)):
        col = layout.loads.start + 2 * k
        leaving[net.load_bus[k], 0, col] += 1.0
        leaving[net.load_bus[k], 1, col + 1] += 1.0

    cap_rows, cap_row_bus, cap_row_inverse = [], [], []
    for c, bus in enumerate(net.cap_bus):
        row = layout.buses.start + 2 * c
        inverse = 1.0 / net.capacitance[c]
        a[row:row + 2] -= inverse * leaving[bus]
        a[row, row + 1] += w
        a[row + 1, row] -= w
        cap_rows += [row, row + 1]
        cap_row_bus += [bus, bus]
        cap_row_inverse += [inverse, inverse]

    layers = np.vstack([np.eye(n_gen), net.area_matrix, net.area_matrix.sum(axis=0, keepdims=True)])
    z_rows = slice(layout.z_c.start, layout.z_s.stop)
    bias[z_rows] = layers @ bank.p_m_ref
    w_pe[z_rows] = -layers
    w_u[z_rows] = layers * bank.droop_gain

    delivery = leaving[net.gen_bus].reshape(2 * n_gen, n)[:, layout.network]
    return SystemOperator(
        a=a,
        bias=bias,
        b_v=b_v,
        w_pe=w_pe,
        w_u=w_u,
        delivery=np.ascontiguousarray(delivery),
        delta_index=layout.generators.start + 4 * np.arange(n_gen),
        valve_index=layout.generators.start + 4 * np.arange(n_gen) + 3,
        valve_min=bank.valve_min,
        valve_max=bank.valve_max,
        cap_rows=np.array(cap_rows, dtype=int),
        cap_row_bus=np.array(cap_row_bus, dtype=int),
        cap_row_inverse=np.array(cap_row_inverse, dtype=float),
    )


class Network:
    """Interconnected generators, loads, lines and capacitor buses."""

    def __init__(
        self,
        scenario: ScenarioDocument,
        bank: Optional[GeneratorBank] = None,
        dynamics: Optional[NetworkModel] = None,
    ):
        self.scenario = scenario
        net = scenario.network
        self.dynamics = NetworkModel(dynamics or net.dynamics)
        self._operator: Optional[SystemOperator] = None
        self._factor: Optional[Tuple] = None
        self._factor_key: Optional[bytes] = None

        self.bank = bank or GeneratorBank.from_params(scenario.generators.items())
        omega_0 = np.unique(self.bank.omega_0)
        if omega_0.size != 1:
            raise ContractViolation("all generators must share the same omega_0")
        self.frame_speed = float(net.base_angular_frequency * omega_0[0])
        self.voltage_limit = net.voltage_limit

        self.generator_ids = self.bank.ids
        self.bus_ids = tuple(net.buses)
        self.line_ids = tuple(net.lines)
        self.area_ids = tuple(scenario.areas)
        self._bus_index = {bus_id: k for k, bus_id in enumerate(self.bus_ids)}

        gen_bus: Dict[str, int] = {}
        load_bus: Dict[str, int] = {}
        for bus_id, bus in net.buses.items():
            if bus.generator is not None:
                gen_bus[bus.generator] = self._bus_index[bus_id]
            if bus.load is not None:
                load_bus[bus.load] = self._bus_index[bus_id]
        missing = [g for g in self.generator_ids if g not in gen_bus]
        if missing:
            raise ContractViolation(f"generator '{missing[0]}' is not attached to a bus")

        self.load_ids = tuple(ld for ld in scenario.loads if ld in load_bus)
        self.gen_bus = np.array([gen_bus[g] for g in self.generator_ids], dtype=int)
        self.gen_voltage = np.array(
            [net.buses[self.bus_ids[b]].voltage for b in self.gen_bus], dtype=float
        )
        self.load_bus = np.array([load_bus[ld] for ld in self.load_ids], dtype=int)
        self.load_resistance = np.array([scenario.loads[ld].resistance for ld in self.load_ids])
        self.load_inductance = np.array([scenario.loads[ld].inductance for ld in self.load_ids])

        self.line_from = np.array([self._bus_index[net.lines[t].from_bus] for t in self.line_ids], dtype=int)
        self.line_to = np.array([self._bus_index[net.lines[t].to_bus] for t in self.line_ids], dtype=int)
        self.line_resistance = np.array([net.lines[t].resistance for t in self.line_ids])
        self.line_inductance = np.array([net.lines[t].inductance for t in self.line_ids])

        n_bus = len(self.bus_ids)
        self.line_incidence = np.zeros((n_bus, len(self.line_ids)))
        self.line_incidence[self.line_from, np.arange(len(self.line_ids))] = 1.0
        self.line_incidence[self.line_to, np.arange(len(self.line_ids))] = -1.0
        self.load_incidence = np.zeros((n_bus, len(self.load_ids)))
        self.load_incidence[self.load_bus, np.arange(len(self.load_ids))] = 1.0

        self.capacitor_bus_ids = tuple(b for b, spec in net.buses.items() if spec.generator is None)
        self.cap_bus = np.array([self._bus_index[b] for b in self.capacitor_bus_ids], dtype=int)
        self.capacitance = np.array(
            [net.buses[b].effective_capacitance for b in self.capacitor_bus_ids]
        )

        self.area_matrix = np.zeros((len(self.area_ids), len(self.generator_ids)))
        generator_area: Dict[str, int] = {}
        for a, area_id in enumerate(self.area_ids):
            for gen_id in scenario.areas[area_id].generators:
                self.area_matrix[a, self.generator_ids.index(gen_id)] = 1.0
                generator_area[gen_id] = a
        self.bus_area = np.array([self._area_of_bus(b, generator_area) for b in self.bus_ids], dtype=int)
        self.tie_line_mask = self.bus_area[self.line_from] != self.bus_area[self.line_to]

        self.layout = StateLayout(
            self.generator_ids, self.load_ids, self.line_ids, self.capacitor_bus_ids, self.area_ids
        )
        logger.debug(
            "Network assembled: %d buses, %d lines, %d tie lines, state size %d",
            n_bus, len(self.line_ids), int(self.tie_line_mask.sum()), self.layout.size,
        )

    def _area_of_bus(self, bus_id: str, generator_area: Dict[str, int]) -> int:
        bus = self.scenario.network.buses[bus_id]
        if bus.generator is not None:
            return generator_area[bus.generator]
        if bus.area is not None:
            return self.area_ids.index(bus.area)
        if len(self.area_ids) == 1:
            return 0
        raise ContractViolation(f"bus '{bus_id}' needs an area in a multi-area system")

    # ------------------------------------------------------------------
    # Lookups

    def bus_index(self, bus_id: str) -> int:
        try:
            return self._bus_index[bus_id]
        except KeyError:
            raise ContractViolation(f"unknown bus '{bus_id}'") from None

    def generator_index(self, generator_id: str) -> int:
        try:
            return self.generator_ids.index(generator_id)
        except ValueError:
            raise ContractViolation(f"unknown generator '{generator_id}'") from None

    def resolve_target(self, target: str) -> int:
        """Bus index of a disturbance target given as bus id or load id."""
        if target in self._bus_index:
            return self._bus_index[target]
        if target in self.load_ids:
            return int(self.load_bus[self.load_ids.index(target)])
        raise ContractViolation(f"disturbance target '{target}' is neither a bus nor a load")

    def _conductance(self, g: Optional[np.ndarray]) -> np.ndarray:
        if g is None:
            return np.zeros(len(self.bus_ids))
        g = np.asarray(g, dtype=float)
        if g.shape != (len(self.bus_ids),):
            raise ContractViolation(f"disturbance vector has shape {g.shape}, expected ({len(self.bus_ids)},)")
        return g

    # ------------------------------------------------------------------
    # Couplings

    def bus_voltages(self, x: np.ndarray) -> np.ndarray:
        """(buses x 2) dq voltages of every bus."""
        delta = x[self.layout.generators].reshape(-1, 4)[:, 0]
        v = np.zeros((len(self.bus_ids), 2))
        v[self.gen_bus, 0] = self.gen_voltage * np.cos(delta)
        v[self.gen_bus, 1] = self.gen_voltage * np.sin(delta)
        v[self.cap_bus] = x[self.layout.buses].reshape(-1, 2)
        return v

    def bus_voltage(self, bus_id: str, x: np.ndarray) -> DqVoltage:
        """
        Voltage of one bus.

        Raises:
            ContractViolation: If the bus id is unknown
        """
        k = self.bus_index(bus_id)
        v = self.bus_voltages(x)[k]
        return DqVoltage(float(v[0]), float(v[1]))

    def delivered_currents(self, x: np.ndarray, g: Optional[np.ndarray] = None) -> np.ndarray:
        """(buses x 2) current leaving each bus into lines, its load and its disturbance."""
        i_load = x[self.layout.loads].reshape(-1, 2)
        i_line = x[self.layout.lines].reshape(-1, 2)
        v = self.bus_voltages(x)
        return (
            self.line_incidence @ i_line
            + self.load_incidence @ i_load
            + self._conductance(g)[:, None] * v
        )

    def net_injection_current(self, bus_id: str, x: np.ndarray, g: Optional[np.ndarray] = None) -> DqCurrent:
        """Line currents into the bus minus local load and disturbance currents."""
        k = self.bus_index(bus_id)
        i_net = -self.delivered_currents(x, g)[k]
        return DqCurrent(float(i_net[0]), float(i_net[1]))

    def electrical_powers(self, x: np.ndarray, g: Optional[np.ndarray] = None) -> np.ndarray:
        """P_e of every generator."""
        v = self.bus_voltages(x)[self.gen_bus]
        delivered = self.delivered_currents(x, g)[self.gen_bus]
        return np.sum(v * delivered, axis=1)

    def electrical_power(self, generator_id: str, x: np.ndarray, g: Optional[np.ndarray] = None) -> float:
        """P_e of one generator, including local load and disturbance draw."""
        return float(self.electrical_powers(x, g)[self.generator_index(generator_id)])

    def capacitor_bus_deriv(self, bus_id: str, x: np.ndarray, g: Optional[np.ndarray] = None) -> DqVoltage:
        """
        Voltage derivative of a capacitor bus.

        Raises:
            ContractViolation: If the bus hosts a generator or is unknown
        """
        k = self.bus_index(bus_id)
        if bus_id not in self.capacitor_bus_ids:
            raise ContractViolation(f"bus '{bus_id}' is a generator bus and has no capacitor state")
        c = self.capacitor_bus_ids.index(bus_id)
        v = self.bus_voltages(x)[k]
        i_net = -self.delivered_currents(x, g)[k]
        d_v_d, d_v_q = capacitor_voltage_rates(
            v[0], v[1], i_net[0], i_net[1], self.capacitance[c], self.frame_speed
        )
        return DqVoltage(float(d_v_d), float(d_v_q))

    # ------------------------------------------------------------------
    # System derivative

    @property
    def operator(self) -> SystemOperator:
        if self._operator is None:
            self._operator = _assemble_operator(self)
        return self._operator

    @property
    def quasi_static(self) -> bool:
        return self.dynamics == NetworkModel.QUASI_STATIC

    def _generator_voltages(self, x: np.ndarray) -> np.ndarray:
        """Interleaved (v_d, v_q) of every generator bus."""
        phasor = self.gen_voltage * np.exp(1j * x[self.operator.delta_index])
        return phasor.view(np.float64)

    def _network_factor(self, g: Optional[np.ndarray]) -> Tuple:
        key = None if g is None else g.tobytes()
        if self._factor_key != key or self._factor is None:
            a, _ = self._network_system(np.zeros(2 * len(self.generator_ids)), g)
            try:
                self._factor = linalg.lu_factor(a, check_finite=False)
            except (linalg.LinAlgError, ValueError) as e:
                raise ContractViolation(f"network steady state is not unique: {e}") from e
            if not np.all(np.isfinite(self._factor[0])) or np.any(np.diag(self._factor[0]) == 0.0):
                raise ContractViolation("network steady state is not unique: singular network matrix")
            self._factor_key = key
        return self._factor

    def _network_system(self, vg: np.ndarray, g: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        op, span = self.operator, self.layout.network
        a = op.a[span, span].copy()
        if g is not None and op.cap_rows.size:
            rows = op.cap_rows - span.start
            a[rows, rows] -= g[op.cap_row_bus] * op.cap_row_inverse
        return a, (op.b_v @ vg)[span]

    def system_deriv(
        self,
        x: np.ndarray,
        u: np.ndarray,
        g: Optional[np.ndarray] = None,
        t: Optional[float] = None,
    ) -> np.ndarray:
        """
        Derivative of the whole interconnected system.

        Every coupling is evaluated from the same input state. With quasi-static
        network dynamics the load, line and capacitor states are replaced by
        their steady state for the present angles and their rates are zero.

        Args:
            x: Flat state vector
            u: Total control input per generator
            g: Disturbance conductance per bus (None for no disturbance)
            t: Time, only used in error messages

        Returns:
            Flat derivative vector

        Raises:
            ContractViolation: On dimension mismatch
            ModelDomainError: If any entry is not finite, naming its component
        """
        self.layout.check_shape(x)
        u = np.asarray(u, dtype=float)
        if u.shape != (len(self.generator_ids),):
            raise ContractViolation(
                f"control vector has shape {u.shape}, expected ({len(self.generator_ids)},)"
            )
        if g is not None:
            g = self._conductance(g)

        op = self.operator
        vg = self._generator_voltages(x)
        if self.quasi_static:
            y = linalg.lu_solve(self._network_factor(g), -(op.b_v[self.layout.network] @ vg),
                                check_finite=False)
        else:
            y = x[self.layout.network]
        p_e = (vg * (op.delivery @ y)).reshape(-1, 2).sum(axis=1)

        dx = op.a @ x + op.bias + op.b_v @ vg + op.w_u @ u
        if g is not None:
            p_e += g[self.gen_bus] * self.gen_voltage ** 2
            dx[op.cap_rows] -= g[op.cap_row_bus] * op.cap_row_inverse * x[op.cap_rows]
        dx += op.w_pe @ p_e
        if self.quasi_static:
            dx[self.layout.network] = 0.0

        if op.valve_limited:
            valve, d_valve = x[op.valve_index], dx[op.valve_index]
            pinned = ((valve <= op.valve_min) & (d_valve < 0)) | ((valve >= op.valve_max) & (d_valve > 0))
            dx[op.valve_index[pinned]] = 0.0

        if not np.isfinite(dx).all():
            self._raise_non_finite(dx, t)
        return dx

    def component_deriv(
        self,
        x: np.ndarray,
        u: np.ndarray,
        g: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """
        The dynamic-network derivative assembled component by component from
        the generator, branch, capacitor and IntV rate functions.

        Slower than ``system_deriv`` and equal to it for dynamic networks; the
        energy bookkeeping uses it as an independent evaluation.
        """
        layout = self.layout
        layout.check_shape(x)
        u = np.asarray(u, dtype=float)
        gen = x[layout.generators].reshape(-1, 4)
        i_load = x[layout.loads].reshape(-1, 2)
        i_line = x[layout.lines].reshape(-1, 2)
        v = self.bus_voltages(x)
        delivered = (
            self.line_incidence @ i_line
            + self.load_incidence @ i_load
            + self._conductance(g)[:, None] * v
        )
        p_e = np.sum(v[self.gen_bus] * delivered[self.gen_bus], axis=1)

        dx = np.empty(layout.size)
        dx[layout.generators] = np.column_stack(
            generator_rates(gen[:, 0], gen[:, 1], gen[:, 2], gen[:, 3], self.bank, p_e, u)
        ).ravel()

        d_load = np.column_stack(branch_rates(
            i_load[:, 0], i_load[:, 1], v[self.load_bus, 0], v[self.load_bus, 1],
            self.load_resistance, self.load_inductance, self.frame_speed,
        )) if len(self.load_ids) else np.empty((0, 2))
        dx[layout.loads] = d_load.ravel()

        v_diff = v[self.line_from] - v[self.line_to]
        d_line = np.column_stack(branch_rates(
            i_line[:, 0], i_line[:, 1], v_diff[:, 0], v_diff[:, 1],
            self.line_resistance, self.line_inductance, self.frame_speed,
        )) if len(self.line_ids) else np.empty((0, 2))
        dx[layout.lines] = d_line.ravel()

        v_cap = v[self.cap_bus]
        i_net = -delivered[self.cap_bus]
        d_cap = np.column_stack(capacitor_voltage_rates(
            v_cap[:, 0], v_cap[:, 1], i_net[:, 0], i_net[:, 1], self.capacitance, self.frame_speed,
        )) if len(self.cap_bus) else np.empty((0, 2))
        dx[layout.buses] = d_cap.ravel()

        rates = layered_rates(self.bank.p_m_ref, p_e, u, self.bank, self.area_matrix)
        dx[layout.z_c] = rates.z_c_dot
        dx[layout.z_r] = rates.z_r_dot
        dx[layout.z_s] = rates.z_s_dot

        if not np.isfinite(dx).all():
            self._raise_non_finite(dx, None)
        return dx

    def _raise_non_finite(self, dx: np.ndarray, t: Optional[float]) -> None:
        index = int(np.flatnonzero(~np.isfinite(dx))[0])
        where = "" if t is None else f" at t={t:.6g}s"
        raise ModelDomainError(
            f"non-finite derivative in '{self.layout.name_of(index)}'{where}",
            component=self.layout.component_of(index),
        )

    def consistent_state(self, x: np.ndarray, g: Optional[np.ndarray] = None) -> np.ndarray:
        """
        ``x`` itself for a dynamic network; with quasi-static network dynamics
        a copy whose network states are the steady state for its angles.
        """
        if not self.quasi_static:
            return x
        return self.solve_network_equilibrium(x, g)

    # ------------------------------------------------------------------
    # Diagnostics

    def power_balance(self, x: np.ndarray, g: Optional[np.ndarray] = None) -> PowerBalance:
        """
        Energy bookkeeping at a state.

        Generation equals the sum of load, disturbance, line dissipation and
        stored-energy rates; the frame rotation terms cancel.
        """
        layout = self.layout
        g = self._conductance(g)
        dx = self.component_deriv(x, np.zeros(len(self.generator_ids)), g)
        v = self.bus_voltages(x)
        i_load = x[layout.loads].reshape(-1, 2)
        i_line = x[layout.lines].reshape(-1, 2)
        d_line = dx[layout.lines].reshape(-1, 2)
        v_cap = x[layout.buses].reshape(-1, 2)
        d_cap = dx[layout.buses].reshape(-1, 2)

        return PowerBalance(
            generation=float(np.sum(self.electrical_powers(x, g))),
            load_power=float(np.sum(v[self.load_bus] * i_load)),
            disturbance_power=float(np.sum(g * np.sum(v * v, axis=1))),
            line_dissipation=float(np.sum(self.line_resistance * np.sum(i_line * i_line, axis=1))),
            line_storage_rate=float(np.sum(self.line_inductance * np.sum(i_line * d_line, axis=1))),
            capacitor_storage_rate=float(np.sum(self.capacitance * np.sum(v_cap * d_cap, axis=1))),
        )

    def network_matrices(self, x: np.ndarray, g: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Affine model of the load/line/capacitor block at fixed generator states.

        Returns (A, b) such that the dynamic network part of the derivative
        equals A @ y + b, with y the network slice of ``x``. A depends only on
        the topology and ``g``; b only on the generator angles.
        """
        x = np.asarray(x, dtype=float)
        self.layout.check_shape(x)
        return self._network_system(self._generator_voltages(x), None if g is None else self._conductance(g))

    def solve_network_equilibrium(self, x: np.ndarray, g: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Copy of ``x`` with the network states at their steady state for the
        present generator angles.

        Raises:
            ContractViolation: If the network matrix is singular
        """
        a, b = self.network_matrices(x, g)
        result = np.array(x, dtype=float)
        try:
            result[self.layout.network] = np.linalg.solve(a, -b)
        except np.linalg.LinAlgError as e:
            raise ContractViolation(f"network steady state is not unique: {e}") from e
        return result

    def tie_flows(self, x: np.ndarray) -> np.ndarray:
        """Real power exported by each area over its tie lines, measured at the area-side bus."""
        v = self.bus_voltages(x)
        i_line = x[self.layout.lines].reshape(-1, 2)
        export = np.zeros(len(self.area_ids))
        for k in np.flatnonzero(self.tie_line_mask):
            export[self.bus_area[self.line_from[k]]] += float(v[self.line_from[k]] @ i_line[k])
            export[self.bus_area[self.line_to[k]]] -= float(v[self.line_to[k]] @ i_line[k])
        return export

    def area_frequency(self, x: np.ndarray) -> np.ndarray:
        """Inertia-weighted mean speed of each area."""
        omega = x[self.layout.generators].reshape(-1, 4)[:, 1]
        weights = self.area_matrix * self.bank.inertia
        return (weights @ omega) / weights.sum(axis=1)

    def voltage_magnitudes(self, x: np.ndarray) -> np.ndarray:
        """|v| of every bus."""
        return np.hypot(*self.bus_voltages(x).T)
