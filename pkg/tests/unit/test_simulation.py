"""Unit tests for the integrator and the simulation loop."""

import math

import numpy as np
import pytest

from eagcsim.core.control import lqr_integrator_gain, stability_condition
from eagcsim.core.errors import ContractViolation, SimulationDivergenceError
from eagcsim.core.metrics import compute_metrics
from eagcsim.core.disturbances import DisturbanceField
from eagcsim.core.schemas import ControllerKind, LqrWeights, NetworkModel
from eagcsim.core.simulation import (
    SampledDisturbances,
    Trajectory,
    column_names,
    initial_state,
    integrate,
    rk4_step,
    run_scenario,
)


class TestRk4Step:
    """Test the classical Runge-Kutta step."""

    def test_zero_derivative(self):
        x = np.array([1.0, -2.0, 3.0])

        np.testing.assert_array_equal(rk4_step(lambda t, s: np.zeros(3), x, 0.0, 0.1), x)

    def test_exponential_decay(self):
        """One step of x' = -x from 1 matches the fourth-order Taylor polynomial."""
        assert rk4_step(lambda t, x: -x, 1.0, 0.0, 0.1) == pytest.approx(0.9048375, abs=1e-7)

    def test_constant_rate_is_exact(self):
        assert rk4_step(lambda t, x: 1.0, 0.0, 0.0, 0.1) == 0.1

    def test_time_dependent_rate(self):
        """x' = t^3 integrates exactly."""
        assert rk4_step(lambda t, x: t ** 3, 0.0, 1.0, 0.5) == pytest.approx((1.5 ** 4 - 1.0) / 4.0, rel=1e-14)

    def test_non_positive_step(self):
        with pytest.raises(ContractViolation):
            rk4_step(lambda t, x: x, 1.0, 0.0, 0.0)

    def test_non_finite_result(self):
        with pytest.raises(SimulationDivergenceError):
            rk4_step(lambda t, x: np.inf, 1.0, 0.0, 0.1)

    def test_fourth_order_on_network(self, single_machine_data, scenario_factory):
        """Halving dt cuts the global error by about 16."""
        single_machine_data["initialization"] = {
            "mode": "explicit",
            "state": {"generators": {"G1": {"delta": 0.2, "omega": 1.01, "p_m": 0.3, "a": 0.1}}},
        }
        scenario = scenario_factory(single_machine_data)
        network, x0 = initial_state(scenario)

        reference = integrate(network, x0, 1.0, 0.00125)
        coarse = integrate(network, x0, 1.0, 0.02)
        fine = integrate(network, x0, 1.0, 0.01)

        ratio = np.linalg.norm(coarse - reference) / np.linalg.norm(fine - reference)
        assert 10.0 < ratio < 22.0


class TestInitialState:
    """Test t = 0 state construction."""

    def test_equilibrium_dispatch(self, single_machine_data, scenario_factory):
        """A unit-voltage generator feeding R=1, X=0.1 supplies 1/1.01."""
        network, x = initial_state(scenario_factory(single_machine_data))

        assert network.bank.p_m_ref[0] == pytest.approx(1.0 / 1.01, rel=1e-10)
        assert network.electrical_powers(x)[0] == pytest.approx(1.0 / 1.01, rel=1e-10)
        np.testing.assert_array_equal(x[network.layout.z_c.start:], 0.0)

    def test_angles_applied(self, two_area_data, scenario_factory):
        two_area_data["initialization"] = {"mode": "equilibrium", "angles": {"G3": 0.05}}

        network, x = initial_state(scenario_factory(two_area_data))

        delta = x[network.layout.generators].reshape(-1, 4)[:, 0]
        np.testing.assert_array_equal(delta, [0.0, 0.0, 0.05])

    def test_flat_settle(self, single_machine_data, scenario_factory):
        """Settling from rest ends with zero IntV states and a moving rotor."""
        single_machine_data["initialization"] = {"mode": "flat_settle", "settle_time": 0.5}

        network, x = initial_state(scenario_factory(single_machine_data))
        layout = network.layout

        np.testing.assert_array_equal(x[layout.z_c.start:], 0.0)
        assert np.linalg.norm(x[layout.loads]) > 0.0

    def test_explicit(self, chain_data, scenario_factory):
        chain_data["initialization"] = {
            "mode": "explicit",
            "state": {
                "generators": {"G2": {"delta": 0.1, "p_m": 0.2, "a": 0.3}},
                "lines": {"T12": [0.4, -0.1]},
                "buses": {"b2": [0.95, 0.02]},
                "z_r": {"A1": 0.5},
                "z_s": 0.25,
            },
        }

        network, x = initial_state(scenario_factory(chain_data))
        state = network.layout.unpack(x)

        assert state.generators["G2"].delta == 0.1
        assert state.generators["G2"].omega == 1.0
        assert state.generators["G1"].omega == 1.0
        assert tuple(state.lines["T12"]) == (0.4, -0.1)
        assert tuple(state.buses["b2"]) == (0.95, 0.02)
        assert state.z_r["A1"] == 0.5
        assert state.z_s == 0.25


class TestRunScenario:
    """Test the controlled simulation loop."""

    def test_record_grid(self, two_area_data, scenario_factory):
        scenario = scenario_factory(two_area_data)

        trajectory = run_scenario(scenario, ControllerKind.PRIMARY)

        expected = int(math.floor(scenario.solver.horizon / scenario.solver.record_dt + 1e-9)) + 1
        assert len(trajectory) == expected
        assert trajectory.time[0] == 0.0
        assert trajectory.time[-1] == pytest.approx(scenario.solver.horizon)
        assert trajectory.columns == column_names(initial_state(scenario)[0])
        assert trajectory.data.shape == (expected, len(trajectory.columns))

    @pytest.mark.parametrize("kind", list(ControllerKind))
    def test_equilibrium_without_disturbance_stays_put(self, two_area_data, scenario_factory, kind):
        """Frequencies remain at omega_ref when nothing perturbs the system."""
        trajectory = run_scenario(scenario_factory(two_area_data), kind, disturbances_enabled=False)

        for g in trajectory.generator_ids:
            np.testing.assert_allclose(trajectory.series(f"gen.{g}.omega"), 1.0, atol=1e-9)

    def test_deterministic(self, two_area_data, scenario_factory):
        """Same scenario and seed give bit-identical records."""
        scenario = scenario_factory(two_area_data)

        first = run_scenario(scenario, ControllerKind.EAGC)
        second = run_scenario(scenario, ControllerKind.EAGC)

        np.testing.assert_array_equal(first.data, second.data)

    def test_run_seed_changes_noise(self, two_area_data, scenario_factory):
        first = run_scenario(scenario_factory(two_area_data), ControllerKind.PRIMARY)
        two_area_data["solver"]["seed"] = 1
        second = run_scenario(scenario_factory(two_area_data), ControllerKind.PRIMARY)

        assert not np.array_equal(first.data, second.data)

    def test_eagc_cancels_component_imbalance(self, two_area_data, scenario_factory):
        """Recorded component IntV rate with u_c alone vanishes at every control instant."""
        trajectory = run_scenario(scenario_factory(two_area_data), ControllerKind.EAGC)

        for g in trajectory.generator_ids:
            np.testing.assert_allclose(trajectory.series(f"intv_residual.{g}"), 0.0, atol=1e-12)

    def test_area_intv_is_sum_of_members(self, two_area_data, scenario_factory):
        trajectory = run_scenario(scenario_factory(two_area_data), ControllerKind.CONVENTIONAL)
        area_of = trajectory.metadata["area_of"]

        for area in trajectory.area_ids:
            members = [g for g in trajectory.generator_ids if area_of[g] == area]
            total = sum(trajectory.series(f"z_c.{g}") for g in members)
            np.testing.assert_allclose(trajectory.series(f"z_r.{area}"), total, atol=1e-9)
        system = sum(trajectory.series(f"z_r.{a}") for a in trajectory.area_ids)
        np.testing.assert_allclose(trajectory.series("z_s"), system, atol=1e-9)

    def test_disturbance_moves_frequency(self, two_area_data, scenario_factory):
        trajectory = run_scenario(scenario_factory(two_area_data), ControllerKind.PRIMARY)

        omega = trajectory.series("gen.G1.omega")
        np.testing.assert_allclose(omega[trajectory.time < 0.5], 1.0, atol=1e-9)
        assert np.max(np.abs(omega - 1.0)) > 1e-5

    def test_coordination_share_follows_r(self, two_area_data, scenario_factory):
        """Doubling a member's R entry halves its gain and quarters its share of u_r^2."""
        two_area_data["controller"]["eagc"] = {"area_weights": {"A1": {"q": 1.0, "r": [1.0, 2.0]}}}
        scenario = scenario_factory(two_area_data)
        gain = lqr_integrator_gain(LqrWeights(q=1.0, r=[1.0, 2.0]), 2)

        report = compute_metrics(run_scenario(scenario, ControllerKind.EAGC), strict=False)

        shares = {row.generator: row.coordination_share for row in report.generators}
        expected = gain.k[0] ** 2 / np.sum(gain.k ** 2)
        assert expected == pytest.approx(0.8)
        assert shares["G1"] == pytest.approx(expected, rel=1e-9)
        assert shares["G2"] == pytest.approx(1.0 - expected, rel=1e-9)
        assert shares["G3"] == pytest.approx(1.0)

    def test_metadata(self, two_area_data, scenario_factory):
        trajectory = run_scenario(scenario_factory(two_area_data), ControllerKind.CONVENTIONAL)
        meta = trajectory.metadata

        assert meta["controller"] == "conventional"
        assert meta["generators"] == ["G1", "G2", "G3"]
        assert meta["areas"] == ["A1", "A2"]
        assert meta["area_of"] == {"G1": "A1", "G2": "A1", "G3": "A2"}
        assert meta["last_disturbance_start"] == 0.5
        assert meta["steps"] == 800

    def test_stability_margin_column(self, two_area_data, scenario_factory):
        """Recorded margin is the stability condition evaluated on the recorded p_e."""
        scenario = scenario_factory(two_area_data)
        network, _ = initial_state(scenario)
        trajectory = run_scenario(scenario, ControllerKind.CONVENTIONAL)
        p_e = np.column_stack([trajectory.series(f"p_e.{g}") for g in trajectory.generator_ids])

        _, expected = stability_condition(p_e, network.bank.p_m_ref, network.bank)

        for i, g in enumerate(trajectory.generator_ids):
            np.testing.assert_allclose(trajectory.series(f"stability_margin.{g}"), expected[:, i], atol=1e-12)

    def test_divergence_reported(self, single_machine_data, scenario_factory):
        """A step far outside the RK4 stability region for the load pole stops the run."""
        single_machine_data["initialization"] = {
            "mode": "explicit",
            "state": {"generators": {"G1": {"omega": 1.01}}},
        }
        single_machine_data["solver"].update(horizon=50.0, dt=0.5, control_dt=0.5, record_dt=0.5)

        with pytest.raises(SimulationDivergenceError) as exc_info:
            run_scenario(scenario_factory(single_machine_data), ControllerKind.PRIMARY)

        assert exc_info.value.time > 0.0


class TestSampledDisturbances:
    """Test the half-step disturbance table."""

    @pytest.fixture
    def field_and_network(self, two_area_data, scenario_factory):
        scenario = scenario_factory(two_area_data)
        network, _ = initial_state(scenario)
        field_ = DisturbanceField.for_network(network, scenario.disturbances, scenario.solver.seed)
        return field_, network

    def test_matches_field_on_the_grid(self, field_and_network):
        field_, network = field_and_network
        dt = 0.005
        sampled = SampledDisturbances(field_, dt, len(network.bus_ids))
        sampled.BLOCK = 64

        for index in [0, 1, 99, 100, 101, 63, 64, 65, 300, 12]:
            t = index * 0.5 * dt
            np.testing.assert_allclose(sampled(t), field_.conductance(t), rtol=1e-12, atol=1e-15)

    def test_inactive_field_is_zero(self, field_and_network):
        _, network = field_and_network
        field_ = DisturbanceField.for_network(network, [], 0)

        sampled = SampledDisturbances(field_, 0.005, len(network.bus_ids))

        np.testing.assert_array_equal(sampled(1.0), np.zeros(len(network.bus_ids)))


class TestQuasiStaticRun:
    """Runs with the network held at its steady state."""

    def test_metadata_records_dynamics(self, two_area_data, scenario_factory):
        scenario = scenario_factory(two_area_data)

        dynamic = run_scenario(scenario, ControllerKind.PRIMARY)
        quasi = run_scenario(scenario, ControllerKind.PRIMARY, dynamics="quasi_static")

        assert dynamic.metadata["network_dynamics"] == "dynamic"
        assert quasi.metadata["network_dynamics"] == "quasi_static"
        assert len(quasi) == len(dynamic)

    def test_recorded_states_are_network_steady_states(self, two_area_data, scenario_factory):
        scenario = scenario_factory(two_area_data)
        network, _ = initial_state(scenario)
        field_ = DisturbanceField.for_network(network, scenario.disturbances, scenario.solver.seed)

        trajectory = run_scenario(scenario, ControllerKind.EAGC, dynamics=NetworkModel.QUASI_STATIC)

        for t, x in list(zip(trajectory.time, trajectory.states()))[::20]:
            np.testing.assert_allclose(
                network.solve_network_equilibrium(x, field_.conductance(t)), x, rtol=1e-9, atol=1e-12
            )

    def test_undisturbed_quasi_static_run_stays_put(self, two_area_data, scenario_factory):
        trajectory = run_scenario(
            scenario_factory(two_area_data), ControllerKind.CONVENTIONAL,
            disturbances_enabled=False, dynamics="quasi_static",
        )

        for g in trajectory.generator_ids:
            np.testing.assert_allclose(trajectory.series(f"gen.{g}.omega"), 1.0, atol=1e-9)

    def test_network_dynamics_change_the_response(self, two_area_data, scenario_factory):
        """Same disturbance, different electrical power paths."""
        scenario = scenario_factory(two_area_data)

        dynamic = run_scenario(scenario, ControllerKind.PRIMARY)
        quasi = run_scenario(scenario, ControllerKind.PRIMARY, dynamics="quasi_static")

        p_e_dynamic = dynamic.series("p_e.G1")
        p_e_quasi = quasi.series("p_e.G1")
        before = dynamic.time < 0.5
        np.testing.assert_allclose(p_e_quasi[before], p_e_dynamic[before], rtol=1e-6, atol=1e-9)
        assert np.max(np.abs(p_e_quasi - p_e_dynamic)) > 1e-6


class TestTrajectory:
    """Test trajectory accessors."""

    def test_series_lookup(self):
        trajectory = Trajectory(
            time=np.array([0.0, 0.1]),
            columns=["a", "b"],
            data=np.array([[1.0, 2.0], [3.0, 4.0]]),
            metadata={"state_size": 1, "generators": [], "areas": []},
        )

        np.testing.assert_array_equal(trajectory.series("b"), [2.0, 4.0])
        np.testing.assert_array_equal(trajectory.states(), [[1.0], [3.0]])
        with pytest.raises(KeyError):
            trajectory.series("missing")
