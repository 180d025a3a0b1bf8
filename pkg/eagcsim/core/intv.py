"""
Interaction variables at component, area and system level.

A component's IntV rate is its conserved net power imbalance; area and system
rates are plain sums of the layer below.
"""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ContractViolation

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class IntvRates:
    """IntV rates of all three layers for one state."""

    z_c_dot: np.ndarray
    z_r_dot: np.ndarray
    z_s_dot: float


def component_intv_rate(p_m_ref: ArrayLike, p_e: ArrayLike, u_c: ArrayLike, params) -> ArrayLike:
    """
    Net power imbalance of a generator: P_m_ref - P_e + (K_t/r) u_c.

    Only the generator's own measurements enter. ``params`` may be a single
    GeneratorParams or a GeneratorBank, in which case arrays are returned.
    """
    rate = np.asarray(p_m_ref) - np.asarray(p_e) + (
        np.asarray(params.turbine_gain) / np.asarray(params.droop)
    ) * np.asarray(u_c)
    if np.ndim(rate) == 0:
        return float(rate)
    return rate


def area_intv_rate(member_rates: Sequence[float]) -> float:
    """
    Area IntV rate, the sum of its members' component rates.

    Raises:
        ContractViolation: If the area has no members
    """
    rates = np.asarray(member_rates, dtype=float)
    if rates.size == 0:
        raise ContractViolation("area has no generators")
    return float(np.sum(rates))


def system_intv_rate(area_rates: Sequence[float]) -> float:
    """
    System IntV rate, the sum over control areas.

    Raises:
        ContractViolation: If there are no areas
    """
    rates = np.asarray(area_rates, dtype=float)
    if rates.size == 0:
        raise ContractViolation("system has no control areas")
    return float(np.sum(rates))


def layered_rates(
    p_m_ref: np.ndarray,
    p_e: np.ndarray,
    u: np.ndarray,
    params,
    area_matrix: np.ndarray,
) -> IntvRates:
    """
    Rates of every layer at once.

    Args:
        p_m_ref: Setpoints per generator
        p_e: Electrical power per generator
        u: Control input per generator
        params: GeneratorBank aligned with the arrays
        area_matrix: (areas x generators) 0/1 membership matrix

    Returns:
        IntvRates with z_r_dot = area_matrix @ z_c_dot and z_s_dot its sum
    """
    z_c_dot = np.atleast_1d(component_intv_rate(p_m_ref, p_e, u, params))
    z_r_dot = area_matrix @ z_c_dot
    return IntvRates(z_c_dot=z_c_dot, z_r_dot=z_r_dot, z_s_dot=float(np.sum(z_r_dot)))
