"""
Pytest configuration and shared fixtures.

Scenario fixtures are built as plain dictionaries so tests can tweak a copy
and validate it with ``make_scenario``.
"""

import copy
from pathlib import Path
from typing import Any, Callable, Dict

import pytest

from eagcsim.core.schemas import GeneratorParams, ScenarioDocument
from eagcsim.utils.config_loader import validate_scenario_data

REPO_ROOT = Path(__file__).resolve().parent.parent
FIVEBUS_PATH = REPO_ROOT / "scenarios" / "fivebus.scenario"
FIVEBUS_RES_PATH = REPO_ROOT / "scenarios" / "fivebus_res.scenario"

MACHINE = {
    "inertia": 2.0,
    "damping": 1.0,
    "turbine_gain": 1.0,
    "turbine_time_constant": 0.3,
    "governor_time_constant": 0.2,
    "droop": 1.0,
    "u_max": 0.5,
}


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')")
    config.addinivalue_line("markers", "integration: marks tests as integration tests")
    config.addinivalue_line("markers", "unit: marks tests as unit tests")


def make_scenario(data: Dict[str, Any]) -> ScenarioDocument:
    """Validate a scenario dictionary (schema and cross-reference checks)."""
    return validate_scenario_data(copy.deepcopy(data))


@pytest.fixture
def scenario_factory() -> Callable[[Dict[str, Any]], ScenarioDocument]:
    """Validator for tweaked scenario dictionaries."""
    return make_scenario


@pytest.fixture
def repo_root() -> Path:
    return REPO_ROOT


@pytest.fixture
def fivebus_path() -> Path:
    """Bundled reference scenario."""
    return FIVEBUS_PATH


@pytest.fixture
def fivebus_res_path() -> Path:
    """Bundled scenario with the fluctuating renewable source."""
    return FIVEBUS_RES_PATH


@pytest.fixture
def textbook_generator() -> GeneratorParams:
    """Generator constants used by the hand-evaluated examples."""
    return GeneratorParams(
        inertia=10.0,
        damping=1.0,
        turbine_gain=1.0,
        turbine_time_constant=0.2,
        governor_time_constant=0.1,
        droop=0.05,
        omega_0=1.0,
        omega_ref=1.0,
        p_m_ref=0.2,
        u_max=0.1,
    )


@pytest.fixture
def single_machine_data() -> Dict[str, Any]:
    """One generator feeding a local R-L load (R=1, L=0.1) in a unit-speed frame."""
    return {
        "metadata": {"name": "single-machine"},
        "network": {
            "base_angular_frequency": 1.0,
            "buses": {"bus1": {"generator": "G1", "load": "L1", "voltage": 1.0}},
        },
        "generators": {"G1": dict(MACHINE)},
        "loads": {"L1": {"resistance": 1.0, "inductance": 0.1}},
        "areas": {"A1": {"generators": ["G1"]}},
        "solver": {"dt": 0.01, "horizon": 2.0, "control_dt": 0.01, "record_dt": 0.01},
    }


@pytest.fixture
def chain_data() -> Dict[str, Any]:
    """
    Two generators joined through a capacitor bus.

        b1 (G1) --T12--> b2 (L2, C) --T23--> b3 (G2)
    """
    return {
        "metadata": {"name": "chain"},
        "network": {
            "base_angular_frequency": 1.0,
            "buses": {
                "b1": {"generator": "G1"},
                "b2": {"load": "L2", "capacitance": 0.001},
                "b3": {"generator": "G2"},
            },
            "lines": {
                "T12": {"from_bus": "b1", "to_bus": "b2", "resistance": 0.1, "inductance": 0.01},
                "T23": {"from_bus": "b2", "to_bus": "b3", "resistance": 0.1, "inductance": 0.01},
            },
        },
        "generators": {"G1": dict(MACHINE), "G2": dict(MACHINE)},
        "loads": {"L2": {"resistance": 1.0, "inductance": 0.1}},
        "areas": {"A1": {"generators": ["G1", "G2"]}},
        "solver": {"dt": 0.001, "horizon": 1.0, "control_dt": 0.01, "record_dt": 0.01},
    }


@pytest.fixture
def two_area_data() -> Dict[str, Any]:
    """
    Small two-area system with a tie line and step plus noise disturbances.

        b1 (G1, L1) --T12-- b2 (L2, C, A1) --T23-- b3 (G2)
                              |
                             T24 (tie)
                              |
                            b4 (G3, L4)
    """
    line = {"resistance": 0.1, "inductance": 0.1}
    return {
        "metadata": {"name": "two-area"},
        "network": {
            "base_angular_frequency": 1.0,
            "buses": {
                "b1": {"generator": "G1", "load": "L1"},
                "b2": {"load": "L2", "capacitance": 0.05, "area": "A1"},
                "b3": {"generator": "G2"},
                "b4": {"generator": "G3", "load": "L4"},
            },
            "lines": {
                "T12": {"from_bus": "b1", "to_bus": "b2", **line},
                "T23": {"from_bus": "b2", "to_bus": "b3", **line},
                "T24": {"from_bus": "b2", "to_bus": "b4", **line},
            },
        },
        "generators": {"G1": dict(MACHINE), "G2": dict(MACHINE), "G3": dict(MACHINE)},
        "loads": {
            "L1": {"resistance": 4.0, "inductance": 0.2},
            "L2": {"resistance": 4.0, "inductance": 0.2},
            "L4": {"resistance": 4.0, "inductance": 0.2},
        },
        "areas": {"A1": {"generators": ["G1", "G2"]}, "A2": {"generators": ["G3"]}},
        "disturbances": [
            {"target": "L2", "kind": "step", "amplitude": 0.02, "start": 0.5},
            {"target": "b3", "kind": "filtered-noise", "amplitude": 0.01,
             "corner_frequency": 1.0, "seed": 3, "start": 0.5},
        ],
        "controller": {"conventional": {"integral_gain": 0.5}},
        "solver": {"dt": 0.005, "horizon": 4.0, "control_dt": 0.01, "record_dt": 0.02, "seed": 0},
    }
