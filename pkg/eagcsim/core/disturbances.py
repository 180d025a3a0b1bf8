"""
Exogenous disturbances.

A disturbance acts on its bus as an extra shunt conductance ``g`` (pu): the
bus draws the additional current ``g·v`` and the power ``g·|v|²``. A step of
0.05 therefore draws 0.05 pu more at nominal voltage, and the drawn power
falls with the square of the bus voltage like a resistive load. Renewable
fluctuations use the same model with a negative offset, a source that injects
roughly ``|offset|`` pu at nominal voltage.

Every signal is zero before its start time. Filtered noise is a first-order
low-pass of seeded white noise sampled on a fixed grid and linearly
interpolated in between; its realization depends only on the disturbance seed
and the run seed, and a longer realization extends a shorter one.
"""

import logging
import math
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import signal

from .schemas import DisturbanceKind, DisturbanceSpec

logger = logging.getLogger(__name__)

_MIN_NOISE_SAMPLES = 256


@lru_cache(maxsize=64)
def _noise_samples(spec: DisturbanceSpec, run_seed: int, count: int) -> np.ndarray:
    """Unit-variance AR(1) samples started from the stationary distribution."""
    rng = np.random.default_rng([run_seed, spec.seed])
    white = rng.standard_normal(count)
    alpha = math.exp(-2.0 * math.pi * spec.corner_frequency * spec.sample_interval)
    gain = math.sqrt(1.0 - alpha * alpha)
    samples = np.empty(count)
    samples[0] = white[0]
    if count > 1:
        samples[1:], _ = signal.lfilter([gain], [1.0, -alpha], white[1:], zi=[alpha * white[0]])
    samples.setflags(write=False)
    return samples


def noise_realization(spec: DisturbanceSpec, duration: float, run_seed: int = 0) -> np.ndarray:
    """
    Unit-variance filtered-noise samples covering ``duration`` seconds after start.

    The sample count is rounded up to a power of two so repeated queries share
    a cached realization.
    """
    needed = int(math.ceil(max(duration, 0.0) / spec.sample_interval)) + 2
    count = max(_MIN_NOISE_SAMPLES, 1 << (needed - 1).bit_length())
    return _noise_samples(spec, run_seed, count)


def disturbance_series(spec: DisturbanceSpec, times: np.ndarray, run_seed: int = 0) -> np.ndarray:
    """
    Values of a disturbance on an array of times.

    Args:
        spec: Disturbance description
        times: Times (s)
        run_seed: Run seed combined with the disturbance seed for noise

    Returns:
        Signal values (pu); 0 before the start time
    """
    times = np.asarray(times, dtype=float)
    elapsed = times - spec.start
    active = elapsed >= 0.0
    if spec.kind == DisturbanceKind.STEP:
        values = np.full(times.shape, spec.amplitude + spec.offset)
    elif spec.kind == DisturbanceKind.SINUSOID:
        values = spec.amplitude * np.sin(2.0 * np.pi * spec.frequency * elapsed) + spec.offset
    else:
        span = float(elapsed.max()) if elapsed.size else 0.0
        samples = noise_realization(spec, span, run_seed)
        position = np.clip(elapsed, 0.0, None) / spec.sample_interval
        values = spec.offset + spec.amplitude * np.interp(position, np.arange(samples.size), samples)
    return np.where(active, values, 0.0)


def disturbance_signal(spec: DisturbanceSpec, t: float, run_seed: int = 0) -> float:
    """
    Value of a disturbance at time ``t``.

    Args:
        spec: Disturbance description
        t: Time (s)
        run_seed: Run seed combined with the disturbance seed for noise

    Returns:
        Signal value (pu); 0 before the start time
    """
    return float(disturbance_series(spec, np.array([t]), run_seed)[0])


class DisturbanceField:
    """All disturbances of a run mapped onto per-bus conductances."""

    def __init__(self, specs: Sequence[DisturbanceSpec], target_buses: Sequence[int],
                 n_buses: int, run_seed: int = 0, enabled: bool = True):
        self.specs = tuple(specs)
        self.target_buses = np.asarray(target_buses, dtype=int)
        self.n_buses = n_buses
        self.run_seed = run_seed
        self.enabled = enabled
        logger.debug("Disturbance field with %d signals (run seed %d)", len(self.specs), run_seed)

    @classmethod
    def for_network(cls, network, specs: Sequence[DisturbanceSpec], run_seed: int = 0,
                    enabled: bool = True) -> 'DisturbanceField':
        """Resolve targets against a Network."""
        buses = [network.resolve_target(spec.target) for spec in specs]
        return cls(specs, buses, len(network.bus_ids), run_seed, enabled)

    def values(self, t: float) -> np.ndarray:
        """Value of each disturbance."""
        if not self.enabled:
            return np.zeros(len(self.specs))
        return np.array([disturbance_signal(spec, t, self.run_seed) for spec in self.specs])

    def conductance(self, t: float) -> np.ndarray:
        """Per-bus conductance vector at time ``t``."""
        return self.conductance_grid(np.array([t]))[0]

    def conductance_grid(self, times: np.ndarray) -> np.ndarray:
        """
        (times x buses) conductances, for sampling a whole run at once.

        Row k equals ``conductance(times[k])``.
        """
        times = np.asarray(times, dtype=float)
        g = np.zeros((times.size, self.n_buses))
        if not self.enabled:
            return g
        for spec, bus in zip(self.specs, self.target_buses):
            g[:, bus] += disturbance_series(spec, times, self.run_seed)
        return g

    @property
    def active(self) -> bool:
        """True when at least one disturbance is applied."""
        return self.enabled and bool(self.specs)

    @property
    def last_start(self) -> float:
        """Latest start time over all disturbances, 0 without any."""
        return max((spec.start for spec in self.specs), default=0.0)
