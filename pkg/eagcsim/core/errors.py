"""
Exception hierarchy for the simulation core.

Scenario-file problems live in ``eagcsim.utils.config_loader`` (``ConfigError``
and its categories); everything raised while evaluating models, running a
simulation or writing results derives from ``EagcSimError``.
"""

from pathlib import Path
from typing import Optional, Union


class EagcSimError(Exception):
    """Base class for simulation errors."""
    pass


class ModelDomainError(EagcSimError, ValueError):
    """Non-finite input or intermediate value in a component model."""

    def __init__(self, message: str, component: Optional[str] = None):
        self.component = component
        if component is not None:
            message = f"{message} (component: {component})"
        super().__init__(message)


class ContractViolation(EagcSimError, ValueError):
    """A caller broke an operation's precondition."""
    pass


class WeightsError(EagcSimError, ValueError):
    """LQR weights are not positive definite or do not match the participants."""
    pass


class SimulationDivergenceError(EagcSimError):
    """The integrated state left the admissible region."""

    def __init__(self, message: str, time: float, component: Optional[str] = None):
        self.time = time
        self.component = component
        detail = f"{message} at t={time:.6g}s"
        if component is not None:
            detail += f" (component: {component})"
        super().__init__(detail)


class MetricsError(EagcSimError, ValueError):
    """Trajectory cannot support the requested metrics."""
    pass


class OutputError(EagcSimError, IOError):
    """Writing or reading run artifacts failed."""

    def __init__(self, message: str, path: Union[str, Path]):
        self.path = Path(path)
        super().__init__(f"{message}: {path}")
