"""Unit tests for network assembly and couplings."""

import math

import numpy as np
import pytest

from eagcsim.core.errors import ContractViolation, ModelDomainError
from eagcsim.core.models import DqCurrent, DqVoltage, GeneratorState, generator_deriv, line_deriv, load_deriv
from eagcsim.core.network import Network, SystemState, real_power
from eagcsim.core.schemas import NetworkModel
from eagcsim.core.simulation import initial_state, run_scenario


def _set_branch(network: Network, x: np.ndarray, kind: str, item: str, value) -> None:
    layout = network.layout
    ids, span = {
        "line": (layout.line_ids, layout.lines),
        "load": (layout.load_ids, layout.loads),
        "bus": (layout.capacitor_bus_ids, layout.buses),
    }[kind]
    k = ids.index(item)
    x[span.start + 2 * k: span.start + 2 * k + 2] = value


class TestStateLayout:
    """Test flat state vector layout."""

    def test_sizes_and_names(self, chain_data, scenario_factory):
        """Blocks are laid out generators first, IntV states last."""
        network = Network(scenario_factory(chain_data))
        layout = network.layout

        # 2 generators x 4, 1 load x 2, 2 lines x 2, 1 capacitor bus x 2, 2 z_c, 1 z_r, z_s
        assert layout.size == 8 + 2 + 4 + 2 + 2 + 1 + 1
        names = layout.names()
        assert names[0] == "gen.G1.delta"
        assert names[layout.loads.start] == "load.L2.i_d"
        assert names[layout.buses.start + 1] == "bus.b2.v_q"
        assert names[-1] == "z_s"
        assert layout.component_of(layout.z_r.start) == "A1"

    def test_pack_unpack(self, chain_data, scenario_factory):
        """Structured values survive a pack and unpack."""
        layout = Network(scenario_factory(chain_data)).layout
        state = SystemState(
            generators={"G2": GeneratorState(0.1, 1.0, 0.2, 0.3)},
            lines={"T23": DqCurrent(0.5, -0.1)},
            buses={"b2": DqVoltage(0.9, 0.05)},
            z_r={"A1": 0.25},
            z_s=-0.5,
        )

        restored = layout.unpack(layout.pack(state))

        assert restored.generators["G2"] == state.generators["G2"]
        assert restored.generators["G1"] == GeneratorState(0.0, 0.0, 0.0, 0.0)
        assert restored.lines["T23"] == DqCurrent(0.5, -0.1)
        assert restored.buses["b2"] == DqVoltage(0.9, 0.05)
        assert restored.z_r["A1"] == 0.25
        assert restored.z_s == -0.5

    def test_pack_unknown_component(self, chain_data, scenario_factory):
        layout = Network(scenario_factory(chain_data)).layout

        with pytest.raises(ContractViolation):
            layout.pack(SystemState(lines={"T99": DqCurrent(0.0, 0.0)}))

    def test_shape_mismatch(self, chain_data, scenario_factory):
        network = Network(scenario_factory(chain_data))

        with pytest.raises(ContractViolation):
            network.system_deriv(np.zeros(3), np.zeros(2))
        with pytest.raises(ContractViolation):
            network.system_deriv(network.layout.zeros(), np.zeros(5))


class TestBusVoltage:
    """Test bus voltage resolution."""

    @pytest.mark.parametrize("voltage,delta,expected", [
        (1.0, 0.0, (1.0, 0.0)),
        (1.0, math.pi / 2, (0.0, 1.0)),
        (1.05, 0.1, (1.044755, 0.104825)),
    ])
    def test_generator_bus(self, chain_data, scenario_factory, voltage, delta, expected):
        """V_g (cos delta, sin delta)."""
        chain_data["network"]["buses"]["b1"]["voltage"] = voltage
        network = Network(scenario_factory(chain_data))
        x = network.layout.zeros()
        x[network.layout.generators.start] = delta

        v = network.bus_voltage("b1", x)

        assert v.v_d == pytest.approx(expected[0], abs=1e-6)
        assert v.v_q == pytest.approx(expected[1], abs=1e-6)

    def test_capacitor_bus_reads_state(self, chain_data, scenario_factory):
        network = Network(scenario_factory(chain_data))
        x = network.layout.zeros()
        _set_branch(network, x, "bus", "b2", (0.7, -0.2))

        assert network.bus_voltage("b2", x) == DqVoltage(0.7, -0.2)

    def test_unknown_bus(self, chain_data, scenario_factory):
        network = Network(scenario_factory(chain_data))

        with pytest.raises(ContractViolation):
            network.bus_voltage("nowhere", network.layout.zeros())


class TestNetInjection:
    """Test Kirchhoff current sums."""

    def test_isolated_bus(self, single_machine_data, scenario_factory):
        """No lines and no load current give zero net injection."""
        network = Network(scenario_factory(single_machine_data))

        assert network.net_injection_current("bus1", network.layout.zeros()) == DqCurrent(0.0, 0.0)

    def test_incoming_line_minus_load(self, chain_data, scenario_factory):
        network = Network(scenario_factory(chain_data))
        x = network.layout.zeros()
        _set_branch(network, x, "line", "T12", (0.5, 0.1))
        _set_branch(network, x, "load", "L2", (0.2, 0.0))

        i_net = network.net_injection_current("b2", x)

        assert i_net.i_d == pytest.approx(0.3)
        assert i_net.i_q == pytest.approx(0.1)

    def test_incoming_minus_outgoing(self, chain_data, scenario_factory):
        network = Network(scenario_factory(chain_data))
        x = network.layout.zeros()
        _set_branch(network, x, "line", "T12", (0.5, 0.1))
        _set_branch(network, x, "line", "T23", (0.3, 0.05))

        i_net = network.net_injection_current("b2", x)

        assert i_net.i_d == pytest.approx(0.2)
        assert i_net.i_q == pytest.approx(0.05)


class TestElectricalPower:
    """Test generator electrical power."""

    def test_real_power(self):
        assert real_power(DqVoltage(0.8, 0.6), DqCurrent(0.25, -0.25)) == pytest.approx(0.05)

    def test_from_outgoing_line(self, chain_data, scenario_factory):
        """v=(1,0), outgoing current (0.5, 0.2)."""
        network = Network(scenario_factory(chain_data))
        x = network.layout.zeros()
        _set_branch(network, x, "line", "T12", (0.5, 0.2))

        assert network.electrical_power("G1", x) == pytest.approx(0.5)

    def test_rotated_voltage(self, chain_data, scenario_factory):
        network = Network(scenario_factory(chain_data))
        x = network.layout.zeros()
        x[network.layout.generators.start] = math.atan2(0.6, 0.8)
        _set_branch(network, x, "line", "T12", (0.25, -0.25))

        assert network.electrical_power("G1", x) == pytest.approx(0.05)

    def test_no_current_no_power(self, chain_data, scenario_factory):
        network = Network(scenario_factory(chain_data))

        assert network.electrical_power("G2", network.layout.zeros()) == 0.0

    def test_incoming_line_counts_negative(self, chain_data, scenario_factory):
        """G2 sits at the receiving end of T23."""
        network = Network(scenario_factory(chain_data))
        x = network.layout.zeros()
        _set_branch(network, x, "line", "T23", (0.4, 0.0))

        assert network.electrical_power("G2", x) == pytest.approx(-0.4)


class TestCapacitorBus:
    """Test shunt capacitor dynamics."""

    def test_rest(self, chain_data, scenario_factory):
        network = Network(scenario_factory(chain_data))

        assert network.capacitor_bus_deriv("b2", network.layout.zeros()) == DqVoltage(0.0, 0.0)

    def test_rotation_term(self, chain_data, scenario_factory):
        """C=0.001, omega=1, v=(1,0), no current gives (0, -1)."""
        network = Network(scenario_factory(chain_data))
        x = network.layout.zeros()
        _set_branch(network, x, "bus", "b2", (1.0, 0.0))

        rate = network.capacitor_bus_deriv("b2", x)

        assert rate.v_d == pytest.approx(0.0, abs=1e-12)
        assert rate.v_q == pytest.approx(-1.0)

    def test_injection_charges(self, chain_data, scenario_factory):
        """I_net = (0.01, 0) gives (10, 0)."""
        network = Network(scenario_factory(chain_data))
        x = network.layout.zeros()
        _set_branch(network, x, "line", "T12", (0.01, 0.0))

        rate = network.capacitor_bus_deriv("b2", x)

        assert rate.v_d == pytest.approx(10.0)
        assert rate.v_q == pytest.approx(0.0, abs=1e-12)

    def test_generator_bus_rejected(self, chain_data, scenario_factory):
        network = Network(scenario_factory(chain_data))

        with pytest.raises(ContractViolation):
            network.capacitor_bus_deriv("b1", network.layout.zeros())


class TestSystemDeriv:
    """Test the assembled system derivative."""

    def test_matches_component_models(self, chain_data, scenario_factory):
        """Each block equals the component model evaluated on the same state."""
        scenario = scenario_factory(chain_data)
        network = Network(scenario)
        layout = network.layout
        rng = np.random.default_rng(7)
        x = rng.normal(scale=0.3, size=layout.size)
        gen = x[layout.generators].reshape(-1, 4)
        gen[:, 1] += 1.0
        x[layout.generators] = gen.ravel()
        u = np.array([0.05, -0.02])

        dx = network.system_deriv(x, u)
        state = layout.unpack(x)
        omega = network.frame_speed

        v = {b: network.bus_voltage(b, x) for b in network.bus_ids}
        for k, gen_id in enumerate(network.generator_ids):
            p_e = network.electrical_power(gen_id, x)
            expected = generator_deriv(state.generators[gen_id], scenario.generators[gen_id], p_e, u[k])
            np.testing.assert_allclose(
                dx[layout.generators][4 * k: 4 * k + 4], expected.as_array(), rtol=1e-12, atol=1e-14
            )
        expected_load = load_deriv(state.loads["L2"], scenario.loads["L2"], v["b2"], omega)
        np.testing.assert_allclose(dx[layout.loads], expected_load, rtol=1e-12, atol=1e-12)
        for k, line_id in enumerate(network.line_ids):
            line = scenario.network.lines[line_id]
            expected_line = line_deriv(state.lines[line_id], line, v[line.from_bus], v[line.to_bus], omega)
            np.testing.assert_allclose(
                dx[layout.lines][2 * k: 2 * k + 2], expected_line, rtol=1e-12, atol=1e-12
            )
        np.testing.assert_allclose(
            dx[layout.buses], network.capacitor_bus_deriv("b2", x), rtol=1e-12, atol=1e-12
        )

    def test_zero_at_equilibrium(self, two_area_data, scenario_factory):
        """Dispatched equilibrium is a fixed point without disturbance."""
        network, x = initial_state(scenario_factory(two_area_data))

        dx = network.system_deriv(x, np.zeros(len(network.generator_ids)))

        np.testing.assert_allclose(dx, 0.0, atol=1e-9)

    def test_non_finite_names_component(self, chain_data, scenario_factory):
        network = Network(scenario_factory(chain_data))
        x = network.layout.zeros()
        _set_branch(network, x, "line", "T23", (np.inf, 0.0))

        with pytest.raises(ModelDomainError) as exc_info:
            network.system_deriv(x, np.zeros(2), t=0.5)

        assert exc_info.value.component is not None
        assert "t=0.5" in str(exc_info.value)

    @pytest.mark.parametrize("seed", range(5))
    def test_compiled_operator_matches_components(self, two_area_data, scenario_factory, seed):
        """The matrix form and the per-component assembly agree at any state."""
        network = Network(scenario_factory(two_area_data))
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=0.4, size=network.layout.size)
        u = rng.normal(scale=0.05, size=3)
        g = rng.normal(scale=0.1, size=len(network.bus_ids))

        np.testing.assert_allclose(network.system_deriv(x, u), network.component_deriv(x, u), rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(
            network.system_deriv(x, u, g), network.component_deriv(x, u, g), rtol=1e-10, atol=1e-10
        )

    def test_compiled_operator_pins_valves(self, two_area_data, scenario_factory):
        two_area_data["generators"]["G2"]["valve_max"] = 0.1
        network = Network(scenario_factory(two_area_data))
        x = network.layout.zeros()
        gen = x[network.layout.generators].reshape(-1, 4)
        gen[:, 1] = 1.0
        gen[1, 3] = 0.1
        x[network.layout.generators] = gen.ravel()
        u = np.array([0.0, 0.5, 0.0])

        dx = network.system_deriv(x, u)

        valve = network.layout.generators.start + 4 * 1 + 3
        assert dx[valve] == 0.0
        np.testing.assert_allclose(dx, network.component_deriv(x, u), atol=1e-12)

    def test_disturbance_draws_conductance_power(self, single_machine_data, scenario_factory):
        """A conductance g at a generator bus adds g |v|^2 to its electrical power."""
        single_machine_data["network"]["buses"]["bus1"]["voltage"] = 1.05
        network = Network(scenario_factory(single_machine_data))
        x = network.layout.zeros()
        g = np.array([0.05])

        extra = network.electrical_power("G1", x, g) - network.electrical_power("G1", x)

        assert extra == pytest.approx(0.05 * 1.05 ** 2)


class TestPowerBalance:
    """Energy bookkeeping of the network."""

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_residual_vanishes(self, two_area_data, scenario_factory, seed):
        """Generation equals load, disturbance, loss and storage rates at any state."""
        network = Network(scenario_factory(two_area_data))
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=0.5, size=network.layout.size)
        g = rng.normal(scale=0.1, size=len(network.bus_ids))

        balance = network.power_balance(x, g)

        assert balance.relative_residual < 1e-9

    @pytest.mark.parametrize("kind", ["primary", "eagc"])
    def test_residual_at_every_recorded_step(self, two_area_data, scenario_factory, kind):
        """Undisturbed run: the bookkeeping closes at every recorded state."""
        two_area_data["disturbances"] = []
        two_area_data["network"]["buses"]["b1"]["voltage"] = 1.02
        two_area_data["initialization"] = {"mode": "equilibrium", "angles": {"G2": 0.05, "G3": -0.04}}
        scenario = scenario_factory(two_area_data)
        network, _ = initial_state(scenario)

        trajectory = run_scenario(scenario, kind, disturbances_enabled=False)

        residuals = [network.power_balance(x).relative_residual for x in trajectory.states()]
        assert len(residuals) == len(trajectory)
        assert max(residuals) < 1e-9


class TestTopology:
    """Test incidence, area and tie-line bookkeeping."""

    def test_tie_lines(self, two_area_data, scenario_factory):
        network = Network(scenario_factory(two_area_data))

        ties = [t for t, tie in zip(network.line_ids, network.tie_line_mask) if tie]

        assert ties == ["T24"]

    def test_tie_flows_are_opposite(self, two_area_data, scenario_factory):
        """Lossless view: exports of the two areas differ only by line loss and storage."""
        network, x = initial_state(scenario_factory(two_area_data))

        exports = network.tie_flows(x)
        t24 = network.line_ids.index("T24")
        i = x[network.layout.lines].reshape(-1, 2)[t24]
        loss = network.line_resistance[t24] * float(i @ i)

        assert exports[0] + exports[1] == pytest.approx(loss, abs=1e-9)

    def test_resolve_target_by_load(self, two_area_data, scenario_factory):
        network = Network(scenario_factory(two_area_data))

        assert network.resolve_target("L4") == network.bus_index("b4")
        assert network.resolve_target("b2") == network.bus_index("b2")
        with pytest.raises(ContractViolation):
            network.resolve_target("nothing")

    def test_area_frequency_is_inertia_weighted(self, two_area_data, scenario_factory):
        two_area_data["generators"]["G2"]["inertia"] = 6.0
        network = Network(scenario_factory(two_area_data))
        x = network.layout.zeros()
        gen = x[network.layout.generators].reshape(-1, 4)
        gen[:, 1] = [1.0, 1.02, 0.99]
        x[network.layout.generators] = gen.ravel()

        freq = network.area_frequency(x)

        assert freq[0] == pytest.approx((2.0 * 1.0 + 6.0 * 1.02) / 8.0)
        assert freq[1] == pytest.approx(0.99)


class TestQuasiStaticNetwork:
    """Network states held at their steady state."""

    @pytest.fixture
    def pair(self, two_area_data, scenario_factory):
        scenario = scenario_factory(two_area_data)
        return Network(scenario), Network(scenario, dynamics=NetworkModel.QUASI_STATIC)

    @staticmethod
    def _state(network, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=0.3, size=network.layout.size)
        gen = x[network.layout.generators].reshape(-1, 4)
        gen[:, 1] += 1.0
        x[network.layout.generators] = gen.ravel()
        return x

    def test_dynamics_from_scenario(self, two_area_data, scenario_factory):
        two_area_data["network"]["dynamics"] = "quasi_static"

        assert Network(scenario_factory(two_area_data)).quasi_static
        assert not Network(scenario_factory(two_area_data), dynamics=NetworkModel.DYNAMIC).quasi_static

    @pytest.mark.parametrize("seed", range(3))
    def test_network_rates_are_zero(self, pair, seed):
        _, network = pair
        x = self._state(network, seed)

        dx = network.system_deriv(x, np.zeros(3))

        assert np.all(dx[network.layout.network] == 0.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_generators_see_steady_state_power(self, pair, seed):
        """Generator and IntV rates equal the dynamic ones at the projected state."""
        dynamic, network = pair
        x = self._state(network, seed)
        g = np.random.default_rng(seed).normal(scale=0.05, size=len(network.bus_ids))
        u = np.array([0.02, -0.01, 0.03])

        projected = dynamic.solve_network_equilibrium(x, g)
        quasi = network.system_deriv(x, u, g)
        full = dynamic.system_deriv(projected, u, g)

        np.testing.assert_allclose(full[network.layout.network], 0.0, atol=1e-9)
        rest = np.ones(network.layout.size, dtype=bool)
        rest[network.layout.network] = False
        np.testing.assert_allclose(quasi[rest], full[rest], rtol=1e-9, atol=1e-10)

    def test_consistent_state(self, pair):
        dynamic, network = pair
        x = self._state(network, 4)

        assert dynamic.consistent_state(x) is x
        np.testing.assert_allclose(network.consistent_state(x), dynamic.solve_network_equilibrium(x))

    def test_factor_follows_conductance(self, pair):
        """Changing the disturbance refactors the network matrix."""
        dynamic, network = pair
        x = self._state(network, 5)
        g = np.zeros(len(network.bus_ids))
        g[network.bus_index("b2")] = 0.2

        network.system_deriv(x, np.zeros(3))
        with_g = network.system_deriv(x, np.zeros(3), g)
        expected = dynamic.system_deriv(dynamic.solve_network_equilibrium(x, g), np.zeros(3), g)

        np.testing.assert_allclose(with_g[network.layout.generators], expected[network.layout.generators],
                                   rtol=1e-9, atol=1e-10)

    def test_network_matrices_are_the_affine_rates(self, pair):
        """A y + b reproduces the network block of the dynamic derivative."""
        dynamic, _ = pair
        x = self._state(dynamic, 6)
        g = np.full(len(dynamic.bus_ids), 0.03)

        a, b = dynamic.network_matrices(x, g)
        span = dynamic.layout.network

        np.testing.assert_allclose(a @ x[span] + b, dynamic.system_deriv(x, np.zeros(3), g)[span],
                                   rtol=1e-10, atol=1e-10)
