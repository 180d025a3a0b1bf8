"""
Trajectory metrics: frequency error, settling, oscillation content and cost.

Spectral quantities use the post-disturbance window of the linearly
detrended speed signal. Amplitude comes from a flat-top windowed spectrum,
the dominant frequency from a Hann windowed one and the band energy from a
Hann periodogram.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import signal
from scipy.fft import rfft, rfftfreq

from .errors import MetricsError
from .schemas import GeneratorMetrics, MetricsReport, SystemMetrics
from .simulation import Trajectory

logger = logging.getLogger(__name__)

SETTLING_BAND = 2.0e-3
STEADY_STATE_FRACTION = 0.2
OSCILLATION_BAND = (0.1, 5.0)
MIN_WINDOW_S = 10.0


def steady_state_error(time: np.ndarray, error: np.ndarray, fraction: float = STEADY_STATE_FRACTION) -> float:
    """Signed mean of ``error`` over the final ``fraction`` of the time span."""
    cutoff = time[0] + (1.0 - fraction) * (time[-1] - time[0])
    return float(np.mean(error[time >= cutoff]))


def settling_time(time: np.ndarray, error: np.ndarray, band: float = SETTLING_BAND) -> float:
    """
    Time of the last sample outside +-band.

    Returns 0 when the signal never leaves the band and the final time when it
    is still outside at the end.
    """
    outside = np.flatnonzero(np.abs(error) > band)
    if outside.size == 0:
        return 0.0
    return float(time[outside[-1]])


def _band_mask(freqs: np.ndarray, band: Tuple[float, float]) -> np.ndarray:
    return (freqs >= band[0]) & (freqs <= band[1])


def oscillation_spectrum(
    values: np.ndarray, sample_interval: float, band: Tuple[float, float] = OSCILLATION_BAND
) -> Tuple[float, float, float]:
    """
    Oscillation content of a signal inside ``band``.

    Returns:
        (peak amplitude, dominant frequency in Hz, band energy)
    """
    n = values.size
    if n < 4:
        return 0.0, 0.0, 0.0
    detrended = signal.detrend(np.asarray(values, dtype=float), type="linear")
    freqs = rfftfreq(n, d=sample_interval)
    in_band = _band_mask(freqs, band)
    if not np.any(in_band):
        return 0.0, 0.0, 0.0

    flattop = signal.get_window("flattop", n)
    amplitude = 2.0 * np.abs(rfft(detrended * flattop)) / np.sum(flattop)
    hann = signal.get_window("hann", n)
    magnitude = np.abs(rfft(detrended * hann))
    band_freqs = freqs[in_band]
    dominant = float(band_freqs[int(np.argmax(magnitude[in_band]))]) if np.any(magnitude[in_band] > 0) else 0.0

    pf, pxx = signal.periodogram(detrended, fs=1.0 / sample_interval, window="hann",
                                 detrend=False, scaling="density")
    energy = float(np.sum(pxx[_band_mask(pf, band)]) * (pf[1] - pf[0]))
    return float(np.max(amplitude[in_band])), dominant, energy


def control_cost(u: np.ndarray, sample_interval: float, weight: float = 1.0) -> float:
    """Left Riemann sum of weight * u^2."""
    u = np.asarray(u, dtype=float)
    if u.size < 2:
        return 0.0
    return float(weight * np.sum(u[:-1] ** 2) * sample_interval)


def compute_metrics(
    trajectory: Trajectory,
    weights: Optional[Sequence[float]] = None,
    strict: bool = True,
) -> MetricsReport:
    """
    Metrics of a finished run.

    Args:
        trajectory: Recorded run
        weights: Per-generator control cost weights (default 1)
        strict: Reject post-disturbance windows shorter than 10 s

    Returns:
        MetricsReport with one entry per generator and a system row

    Raises:
        MetricsError: If the window is too short in strict mode
    """
    time = trajectory.time
    if time.size < 2:
        raise MetricsError("trajectory needs at least two samples")
    dt = float(trajectory.metadata["record_dt"])
    start = float(trajectory.metadata.get("last_disturbance_start", 0.0))
    window = time >= start
    window_s = float(time[-1] - start) if np.any(window) else 0.0
    if window_s < MIN_WINDOW_S:
        message = f"post-disturbance window is {window_s:.3g}s, shorter than {MIN_WINDOW_S:g}s"
        if strict:
            raise MetricsError(message)
        logger.warning("%s; spectral metrics are unreliable", message)

    generators = trajectory.generator_ids
    weights = np.ones(len(generators)) if weights is None else np.asarray(weights, dtype=float)
    omega_ref = trajectory.metadata["omega_ref"]

    area_of = trajectory.metadata["area_of"]
    u_r_energy = {g: control_cost(trajectory.series(f"u_r.{g}"), dt) for g in generators}

    rows = []
    for k, g in enumerate(generators):
        error = trajectory.series(f"gen.{g}.omega") - omega_ref[k]
        amplitude, dominant, energy = oscillation_spectrum(error[window], dt)
        area_total = sum(u_r_energy[m] for m in generators if area_of[m] == area_of[g])
        rows.append(GeneratorMetrics(
            generator=g,
            steady_state_error=steady_state_error(time, error),
            settling_time=settling_time(time, error),
            oscillation_amplitude=amplitude,
            dominant_frequency=dominant,
            band_energy=energy,
            control_cost=control_cost(trajectory.series(f"u.{g}"), dt, float(weights[k])),
            coordination_share=u_r_energy[g] / area_total if area_total > 0 else 0.0,
        ))

    z_r = np.column_stack([trajectory.series(f"z_r.{a}")[window] for a in trajectory.area_ids])
    system = SystemMetrics(
        steady_state_error=max(abs(r.steady_state_error) for r in rows),
        settling_time=max(r.settling_time for r in rows),
        oscillation_amplitude=max(r.oscillation_amplitude for r in rows),
        band_energy=sum(r.band_energy for r in rows),
        control_cost=sum(r.control_cost for r in rows),
        interarea_intv_rms=float(np.sqrt(np.mean(z_r ** 2))) if z_r.size else 0.0,
    )
    return MetricsReport(
        controller=str(trajectory.metadata.get("controller", "")),
        window_s=max(window_s, 0.0),
        generators=rows,
        system=system,
    )
