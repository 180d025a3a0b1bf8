"""Unit tests for disturbance signals."""

import math

import numpy as np
import pytest

from eagcsim.core.disturbances import DisturbanceField, disturbance_signal, noise_realization
from eagcsim.core.network import Network
from eagcsim.core.schemas import DisturbanceKind, DisturbanceSpec


def _noise(seed: int = 3, **kwargs) -> DisturbanceSpec:
    values = dict(target="b3", kind=DisturbanceKind.FILTERED_NOISE, amplitude=1.0,
                  corner_frequency=1.0, seed=seed, start=0.0)
    values.update(kwargs)
    return DisturbanceSpec(**values)


class TestDisturbanceSignal:
    """Test deterministic signal shapes."""

    def test_step_before_start(self):
        spec = DisturbanceSpec(target="b1", kind="step", amplitude=0.1, start=1.0)

        assert disturbance_signal(spec, 0.5) == 0.0

    def test_step_after_start(self):
        spec = DisturbanceSpec(target="b1", kind="step", amplitude=0.1, start=1.0)

        assert disturbance_signal(spec, 2.0) == pytest.approx(0.1)

    def test_sinusoid_quarter_period(self):
        """0.05 sin(2 pi 2 0.125) = 0.05."""
        spec = DisturbanceSpec(target="b1", kind="sinusoid", amplitude=0.05, frequency=2.0, start=0.0)

        assert disturbance_signal(spec, 0.125) == pytest.approx(0.05)

    def test_sinusoid_phase_starts_at_start_time(self):
        spec = DisturbanceSpec(target="b1", kind="sinusoid", amplitude=0.05, frequency=2.0, start=3.0)

        assert disturbance_signal(spec, 3.0) == pytest.approx(0.0, abs=1e-15)
        assert disturbance_signal(spec, 2.9) == 0.0

    def test_offset_applies_after_start(self):
        spec = DisturbanceSpec(target="b1", kind="step", amplitude=0.02, offset=-0.2, start=1.0)

        assert disturbance_signal(spec, 0.0) == 0.0
        assert disturbance_signal(spec, 1.0) == pytest.approx(-0.18)


class TestFilteredNoise:
    """Test seeded low-pass noise."""

    def test_zero_before_start(self):
        assert disturbance_signal(_noise(start=2.0), 1.0) == 0.0

    def test_reproducible(self):
        spec = _noise()
        values = [disturbance_signal(spec, t) for t in np.linspace(0.0, 5.0, 37)]

        again = [disturbance_signal(_noise(), t) for t in np.linspace(0.0, 5.0, 37)]

        assert values == again

    def test_seeds_give_different_realizations(self):
        a = noise_realization(_noise(seed=1), 10.0)
        b = noise_realization(_noise(seed=2), 10.0)
        c = noise_realization(_noise(seed=1), 10.0, run_seed=5)

        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_longer_realization_extends_shorter(self):
        short = noise_realization(_noise(), 5.0)
        long = noise_realization(_noise(), 500.0)

        assert long.size > short.size
        np.testing.assert_array_equal(long[:short.size], short)

    def test_unit_stationary_variance(self):
        samples = noise_realization(_noise(), 600.0)

        assert samples.size >= 60000
        assert np.var(samples) == pytest.approx(1.0, abs=0.15)
        assert abs(np.mean(samples)) < 0.15

    def test_low_pass_correlation(self):
        """Lag-one correlation equals the filter pole."""
        spec = _noise()
        samples = noise_realization(spec, 600.0)
        alpha = math.exp(-2.0 * math.pi * spec.corner_frequency * spec.sample_interval)

        lag_one = np.corrcoef(samples[:-1], samples[1:])[0, 1]

        assert lag_one == pytest.approx(alpha, abs=0.01)

    def test_interpolates_between_samples(self):
        spec = _noise(amplitude=0.5, offset=0.1)
        samples = noise_realization(spec, 1.0)

        midpoint = disturbance_signal(spec, 2.5 * spec.sample_interval)

        assert midpoint == pytest.approx(0.1 + 0.5 * 0.5 * (samples[2] + samples[3]))

    def test_realization_is_read_only(self):
        samples = noise_realization(_noise(), 1.0)

        with pytest.raises(ValueError):
            samples[0] = 1.0


class TestDisturbanceField:
    """Test mapping of disturbances onto bus conductances."""

    def test_conductance_sums_per_bus(self, two_area_data, scenario_factory):
        two_area_data["disturbances"] = [
            {"target": "L2", "kind": "step", "amplitude": 0.02, "start": 0.0},
            {"target": "b2", "kind": "step", "amplitude": 0.03, "start": 0.0},
            {"target": "L4", "kind": "step", "amplitude": 0.01, "start": 1.0},
        ]
        scenario = scenario_factory(two_area_data)
        network = Network(scenario)
        field_ = DisturbanceField.for_network(network, scenario.disturbances)

        g_early = field_.conductance(0.5)
        g_late = field_.conductance(1.5)

        assert g_early[network.bus_index("b2")] == pytest.approx(0.05)
        assert g_early[network.bus_index("b4")] == 0.0
        assert g_late[network.bus_index("b4")] == pytest.approx(0.01)
        assert field_.last_start == 1.0

    def test_disabled_field_is_zero(self, two_area_data, scenario_factory):
        scenario = scenario_factory(two_area_data)
        field_ = DisturbanceField.for_network(Network(scenario), scenario.disturbances, enabled=False)

        np.testing.assert_array_equal(field_.conductance(10.0), 0.0)

    def test_no_disturbances(self):
        field_ = DisturbanceField([], [], n_buses=3)

        np.testing.assert_array_equal(field_.conductance(1.0), np.zeros(3))
        assert field_.last_start == 0.0

    def test_grid_matches_pointwise_values(self, two_area_data, scenario_factory):
        """Sampling a whole grid gives the same conductances as one time at a time."""
        two_area_data["disturbances"] = [
            {"target": "L2", "kind": "step", "amplitude": 0.02, "offset": 0.01, "start": 0.3},
            {"target": "b3", "kind": "sinusoid", "amplitude": 0.01, "frequency": 2.0, "start": 0.1},
            {"target": "b3", "kind": "filtered-noise", "amplitude": 0.02, "corner_frequency": 1.0,
             "seed": 4, "start": 0.2},
        ]
        scenario = scenario_factory(two_area_data)
        network = Network(scenario)
        field_ = DisturbanceField.for_network(network, scenario.disturbances, run_seed=2)
        times = np.linspace(0.0, 3.0, 241)

        grid = field_.conductance_grid(times)

        assert grid.shape == (times.size, len(network.bus_ids))
        for k in [0, 7, 8, 24, 25, 100, 240]:
            np.testing.assert_allclose(grid[k], field_.conductance(times[k]), rtol=1e-12, atol=1e-15)
        b3 = network.bus_index("b3")
        expected = sum(disturbance_signal(spec, times[100], 2) for spec in scenario.disturbances[1:])
        assert grid[100, b3] == pytest.approx(expected, rel=1e-12)
        np.testing.assert_array_equal(grid[:, network.bus_index("b4")], 0.0)
