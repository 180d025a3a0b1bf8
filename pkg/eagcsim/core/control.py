"""
Frequency controllers.

Control laws:
    - component layer: u_c = (r/K_t)(P_e - P_m_ref), cancelling the generator's
      own net power imbalance
    - area and system layers: LQR on pure integrators z' = B u with B = 1-vector,
      u = -K z
    - composite: u = clamp(u_c + u_r + u_s, -u_max, u_max)
    - conventional AGC: integral of ACE = dP_tie + B_bias * d_omega

The controller classes wrap these laws for the simulation loop; all of them
share ``reset`` and ``update`` and return a ``ControlAction``.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .errors import ContractViolation, WeightsError
from .schemas import (
    ControllerKind,
    ConventionalSection,
    EagcSection,
    LqrWeights,
    ScenarioDocument,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

CARE_RESIDUAL_TOLERANCE = 1e-10
PSD_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LqrGain:
    """Feedback gain of one coordination layer."""

    k: np.ndarray
    p: float
    residual: float
    decay_rate: float

    @property
    def participants(self) -> int:
        return int(self.k.size)


@dataclass(frozen=True)
class ConventionalAgcParams:
    """ACE integral controller of one area."""

    frequency_bias: float
    integral_gain: float
    participation: np.ndarray
    tie_schedule: float = 0.0

    def __post_init__(self) -> None:
        if self.integral_gain <= 0:
            raise ContractViolation("integral gain must be positive")
        if np.any(self.participation < 0) or abs(float(np.sum(self.participation)) - 1.0) > 1e-9:
            raise ContractViolation("participation factors must be nonnegative and sum to 1")


@dataclass(frozen=True)
class LyapunovCertificate:
    """Rank-one quadratic form V = x^T P x of a generator's deviation state."""

    t1: np.ndarray
    t2: np.ndarray
    p: np.ndarray

    def value(self, deviation: np.ndarray) -> float:
        deviation = np.asarray(deviation, dtype=float)
        return float(deviation @ self.p @ deviation)


@dataclass(frozen=True)
class ControlAction:
    """Controller output for one control interval."""

    u: np.ndarray
    u_c: np.ndarray
    u_r: np.ndarray
    u_s: np.ndarray
    saturated: np.ndarray
    ace: np.ndarray


# ----------------------------------------------------------------------
# Control laws


def component_control(p_e: ArrayLike, p_m_ref: ArrayLike, params) -> ArrayLike:
    """
    Component-level signal (r/K_t)(P_e - P_m_ref).

    ``params`` may be a GeneratorParams or a GeneratorBank.
    """
    u_c = (np.asarray(params.droop) / np.asarray(params.turbine_gain)) * (
        np.asarray(p_e) - np.asarray(p_m_ref)
    )
    return float(u_c) if np.ndim(u_c) == 0 else u_c


def validate_weights(q: float, r: Sequence[float], n_participants: int) -> Tuple[float, np.ndarray]:
    """
    Check LQR weights of an integrator layer.

    Raises:
        WeightsError: If Q or any R entry is not a positive finite number, or
            R does not have one entry per participant
    """
    if n_participants < 1:
        raise WeightsError("a coordination layer needs at least one participant")
    r_diag = np.asarray(r, dtype=float)
    if r_diag.shape != (n_participants,):
        raise WeightsError(
            f"R has {r_diag.size} diagonal entries for {n_participants} participants"
        )
    if not np.isfinite(q) or q <= 0:
        raise WeightsError(f"Q must be positive definite (got {q})")
    if not np.all(np.isfinite(r_diag)) or np.any(r_diag <= 0):
        raise WeightsError(f"R must be positive definite (got diagonal {r_diag.tolist()})")
    return float(q), r_diag


def lqr_integrator_gain(weights: Optional[LqrWeights], n_participants: int) -> LqrGain:
    """
    LQR gain for z' = 1^T u with cost Q z^2 + u^T R u.

    Args:
        weights: Layer weights; None means Q = 1, R = identity
        n_participants: Number of inputs sharing the integrator

    Returns:
        LqrGain with K = R^-1 B^T P, the CARE residual and the closed-loop
        decay rate B K

    Raises:
        WeightsError: If the weights are not positive definite
    """
    if weights is None:
        weights = LqrWeights(q=1.0, r=[1.0] * max(n_participants, 1))
    q, r_diag = validate_weights(weights.q, weights.r, n_participants)

    a = np.zeros((1, 1))
    b = np.ones((1, n_participants))
    r_mat = np.diag(r_diag)
    p = float(linalg.solve_continuous_are(a, b, np.array([[q]]), r_mat)[0, 0])

    k = np.linalg.solve(r_mat, b.T * p).ravel()
    spread = float(b @ np.linalg.solve(r_mat, b.T))
    residual = abs(q - p * spread * p)
    if residual >= CARE_RESIDUAL_TOLERANCE * max(1.0, q):
        logger.warning("CARE residual %.3e above tolerance (Q=%g, n=%d)", residual, q, n_participants)
    return LqrGain(k=k, p=p, residual=residual, decay_rate=spread * p)


def _apply_headroom(values: np.ndarray, headroom: Optional[ArrayLike]) -> np.ndarray:
    if headroom is None:
        return values
    limit = np.asarray(headroom, dtype=float)
    if limit.ndim == 0:
        limit = np.full(values.shape, float(limit))
    if limit.shape != values.shape:
        raise ContractViolation(
            f"headroom has shape {limit.shape}, expected {values.shape}"
        )
    return np.clip(values, -limit, limit)


def area_control(z_r: float, gain: LqrGain, headroom: Optional[ArrayLike] = None) -> np.ndarray:
    """
    Area-layer signal -K z_r per member generator.

    Args:
        z_r: Area IntV (pu*s)
        gain: Area gain
        headroom: Remaining saturation headroom per member (optional)

    Raises:
        ContractViolation: If z_r is not a scalar or headroom does not match K
    """
    if np.ndim(z_r) != 0:
        raise ContractViolation("area IntV must be a scalar")
    return _apply_headroom(-gain.k * float(z_r), headroom)


def system_control(z_s: float, gain: LqrGain, headroom: Optional[ArrayLike] = None) -> np.ndarray:
    """System-layer signal -K z_s, one share per control area."""
    if np.ndim(z_s) != 0:
        raise ContractViolation("system IntV must be a scalar")
    return _apply_headroom(-gain.k * float(z_s), headroom)


def distribute_share(share: float, n_members: int, participation: Optional[Sequence[float]] = None) -> np.ndarray:
    """Split an area's system share among its generators (equal split by default)."""
    if participation is None:
        return np.full(n_members, share / n_members)
    factors = np.asarray(participation, dtype=float)
    if factors.shape != (n_members,):
        raise ContractViolation(f"participation has {factors.size} entries for {n_members} generators")
    return share * factors


def compose_control(u_c: ArrayLike, u_r: ArrayLike, u_s: ArrayLike, u_max: ArrayLike):
    """
    Saturated composite signal.

    Returns:
        (u, saturated) where u = clamp(u_c + u_r + u_s, -u_max, u_max) and
        saturated is True only when the raw sum strictly exceeds the limit
    """
    raw = np.asarray(u_c) + np.asarray(u_r) + np.asarray(u_s)
    limit = np.asarray(u_max)
    if np.any(limit <= 0):
        raise ContractViolation("u_max must be positive")
    saturated = np.abs(raw) > limit
    u = np.clip(raw, -limit, limit)
    if np.ndim(u) == 0:
        return float(u), bool(saturated)
    return u, saturated


def conventional_agc_step(
    delta_omega: float,
    tie_deviation: float,
    params: ConventionalAgcParams,
    integral: float,
    dt: float,
) -> Tuple[np.ndarray, float, float]:
    """
    One update of an area's ACE integral controller.

    Args:
        delta_omega: Area frequency deviation (pu)
        tie_deviation: Export minus schedule (pu)
        params: Area controller constants
        integral: Accumulated ACE integral
        dt: Update interval (s)

    Returns:
        (per-generator u, updated integral, ACE)
    """
    if dt <= 0:
        raise ContractViolation(f"dt must be positive (got {dt})")
    ace = tie_deviation + params.frequency_bias * delta_omega
    integral = integral + ace * dt
    u = -params.integral_gain * integral * params.participation
    return u, integral, ace


def stability_condition(p_e: ArrayLike, p_m_ref: ArrayLike, params):
    """
    Stability condition |P_e - P_m_ref| <= (K_t/r) u_max.

    Returns:
        (satisfied, margin) with margin = (K_t/r) u_max - |P_e - P_m_ref|
    """
    bound = np.asarray(params.turbine_gain) / np.asarray(params.droop) * np.asarray(params.u_max)
    margin = bound - np.abs(np.asarray(p_e) - np.asarray(p_m_ref))
    if np.ndim(margin) == 0:
        return bool(margin >= 0), float(margin)
    return margin >= 0, margin


def lyapunov_matrix(params) -> LyapunovCertificate:
    """
    Rank-one Lyapunov matrix P = (T2 T1)^T (T2 T1) of a generator.

    T1 = [(D + K_t/r)/M, M, T_u, T_g K_t/r], T2 = [0, M, T_u, T_g K_t/r]^T.

    Raises:
        ContractViolation: If P fails the symmetry, semidefiniteness or rank check
    """
    droop_gain = params.turbine_gain / params.droop
    tail = [params.inertia, params.turbine_time_constant, params.governor_time_constant * droop_gain]
    t1 = np.array([[(params.damping + droop_gain) / params.inertia, *tail]])
    t2 = np.array([[0.0, *tail]]).T
    m = t2 @ t1
    p = m.T @ m
    p = (p + p.T) / 2.0

    scale = max(1.0, float(np.linalg.norm(p, 2)))
    if float(np.min(np.linalg.eigvalsh(p))) < -PSD_TOLERANCE * scale:
        raise ContractViolation("Lyapunov matrix is not positive semidefinite")
    singular = np.linalg.svd(p, compute_uv=False)
    if singular[1] >= PSD_TOLERANCE * scale:
        raise ContractViolation("Lyapunov matrix has rank above one")
    return LyapunovCertificate(t1=t1, t2=t2, p=p)


# ----------------------------------------------------------------------
# Gains and weights of a scenario


def layer_gains(scenario: ScenarioDocument) -> Dict[str, LqrGain]:
    """
    Area gains keyed by area id plus the coordinator gain under ``"system"``.

    Raises:
        WeightsError: If configured weights are invalid
    """
    section = scenario.controller.eagc
    gains = {
        area_id: lqr_integrator_gain(section.area_weights.get(area_id), len(area.generators))
        for area_id, area in scenario.areas.items()
    }
    gains["system"] = lqr_integrator_gain(section.system_weights, len(scenario.areas))
    return gains


def control_weights(scenario: ScenarioDocument) -> np.ndarray:
    """Per-generator cost weight, taken from the area R diagonals (default 1)."""
    weights = []
    areas = scenario.controller.eagc.area_weights
    for gen_id in scenario.generators:
        area_id = scenario.area_of(gen_id)
        if area_id in areas:
            position = scenario.areas[area_id].generators.index(gen_id)
            weights.append(areas[area_id].r[position])
        else:
            weights.append(1.0)
    return np.array(weights, dtype=float)


# ----------------------------------------------------------------------
# Controllers


class Controller(ABC):
    """Sampled controller driven by the simulation loop."""

    kind: ControllerKind

    def __init__(self, network):
        self.network = network
        self.bank = network.bank
        self.n_generators = len(network.generator_ids)
        self.n_areas = len(network.area_ids)
        self.members = [np.flatnonzero(row) for row in network.area_matrix]

    def reset(self, x0: np.ndarray) -> None:
        """Prepare for a run starting at ``x0``."""

    @abstractmethod
    def update(self, t: float, x: np.ndarray, p_e: np.ndarray) -> ControlAction:
        """Control action held until the next update."""

    def _action(self, u_c, u_r, u_s, ace=None) -> ControlAction:
        u, saturated = compose_control(u_c, u_r, u_s, self.bank.u_max)
        return ControlAction(
            u=u,
            u_c=np.asarray(u_c, dtype=float),
            u_r=np.asarray(u_r, dtype=float),
            u_s=np.asarray(u_s, dtype=float),
            saturated=saturated,
            ace=np.zeros(self.n_areas) if ace is None else ace,
        )


class PrimaryController(Controller):
    """Governor droop only; u_AGC is zero."""

    kind = ControllerKind.PRIMARY

    def update(self, t: float, x: np.ndarray, p_e: np.ndarray) -> ControlAction:
        zeros = np.zeros(self.n_generators)
        return self._action(zeros, zeros, zeros)


class ConventionalAgcController(Controller):
    """Tie-line bias control: each area integrates its ACE."""

    kind = ControllerKind.CONVENTIONAL

    def __init__(self, network, section: ConventionalSection, control_dt: float):
        super().__init__(network)
        self.section = section
        self.control_dt = control_dt
        self.params: Dict[int, ConventionalAgcParams] = {}
        self.integral = np.zeros(self.n_areas)

    def _area_params(self, a: int, schedule: float) -> ConventionalAgcParams:
        area_id = self.network.area_ids[a]
        members = self.members[a]
        config = self.section.areas.get(area_id)
        bias = config.frequency_bias if config and config.frequency_bias is not None else None
        if bias is None:
            bias = float(np.sum(1.0 / self.bank.droop[members]))
        if config and config.participation is not None:
            participation = np.asarray(config.participation, dtype=float)
            if participation.shape != members.shape:
                raise ContractViolation(
                    f"area '{area_id}' participation has {participation.size} entries "
                    f"for {members.size} generators"
                )
        else:
            participation = np.full(members.size, 1.0 / members.size)
        if config and config.tie_schedule is not None:
            schedule = config.tie_schedule
        return ConventionalAgcParams(
            frequency_bias=bias,
            integral_gain=self.section.integral_gain,
            participation=participation,
            tie_schedule=schedule,
        )

    def reset(self, x0: np.ndarray) -> None:
        schedules = self.network.tie_flows(x0)
        self.params = {a: self._area_params(a, float(schedules[a])) for a in range(self.n_areas)}
        self.integral = np.zeros(self.n_areas)
        self._omega_ref = (self.network.area_matrix * self.bank.inertia) @ self.bank.omega_ref / (
            (self.network.area_matrix * self.bank.inertia).sum(axis=1)
        )
        logger.debug("Conventional AGC tie schedules: %s", dict(zip(self.network.area_ids, schedules)))

    def update(self, t: float, x: np.ndarray, p_e: np.ndarray) -> ControlAction:
        if not self.params:
            self.reset(x)
        delta_omega = self.network.area_frequency(x) - self._omega_ref
        ties = self.network.tie_flows(x)
        u_r = np.zeros(self.n_generators)
        ace = np.zeros(self.n_areas)
        for a, members in enumerate(self.members):
            params = self.params[a]
            u_area, self.integral[a], ace[a] = conventional_agc_step(
                float(delta_omega[a]),
                float(ties[a] - params.tie_schedule),
                params,
                float(self.integral[a]),
                self.control_dt,
            )
            u_r[members] = u_area
        zeros = np.zeros(self.n_generators)
        return self._action(zeros, u_r, zeros, ace)


class EnhancedAgcController(Controller):
    """
    Three-layer IntV controller.

    Per update: generators report P_e, areas report z_r, the coordinator
    returns area shares of -K_s z_s, and each generator receives
    u_c + u_r + u_s. Area and system terms are clipped to the headroom left by
    the layers below.
    """

    kind = ControllerKind.EAGC

    def __init__(self, network, section: EagcSection, gains: Dict[str, LqrGain]):
        super().__init__(network)
        self.section = section
        self.area_gains = [gains[area_id] for area_id in network.area_ids]
        self.system_gain = gains["system"]
        for area_id, gain, members in zip(network.area_ids, self.area_gains, self.members):
            if gain.participants != members.size:
                raise ContractViolation(
                    f"gain of area '{area_id}' has {gain.participants} entries for {members.size} generators"
                )
        if self.system_gain.participants != self.n_areas:
            raise ContractViolation("system gain does not match the number of areas")
        self.participation = [
            section.area_participation.get(area_id) for area_id in network.area_ids
        ]

    def update(self, t: float, x: np.ndarray, p_e: np.ndarray) -> ControlAction:
        layout = self.network.layout
        u_max = self.bank.u_max
        u_c = component_control(p_e, self.bank.p_m_ref, self.bank)

        z_r = x[layout.z_r]
        headroom = np.maximum(u_max - np.abs(u_c), 0.0)
        u_r = np.zeros(self.n_generators)
        for a, members in enumerate(self.members):
            u_r[members] = area_control(float(z_r[a]), self.area_gains[a], headroom[members])

        shares = system_control(float(x[layout.z_s][0]), self.system_gain)
        u_s = np.zeros(self.n_generators)
        for a, members in enumerate(self.members):
            u_s[members] = distribute_share(float(shares[a]), members.size, self.participation[a])
        u_s = _apply_headroom(u_s, np.maximum(u_max - np.abs(u_c + u_r), 0.0))

        return self._action(u_c, u_r, u_s)


def build_controller(kind: ControllerKind, network, scenario: ScenarioDocument) -> Controller:
    """
    Controller instance for a scenario.

    Raises:
        WeightsError: If E-AGC weights are invalid
    """
    kind = ControllerKind(kind)
    if kind == ControllerKind.PRIMARY:
        return PrimaryController(network)
    if kind == ControllerKind.CONVENTIONAL:
        return ConventionalAgcController(
            network, scenario.controller.conventional, scenario.solver.control_dt
        )
    return EnhancedAgcController(network, scenario.controller.eagc, layer_gains(scenario))
