"""15-state error-state EKF: IMU propagation and per-leg zero-velocity updates.

Error-state order is ``(dp, dv, dtheta, db_a, db_g)``, each block 3 wide.
The attitude error is expressed in the body frame, i.e. the true rotation is
``R @ Exp(dtheta)``; the propagation and measurement Jacobians below are the
ones consistent with that choice, and corrections are injected the same way.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .so3 import exp_map, is_rotation, skew

P_, V_, TH_, BA_, BG_ = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)
STATE_DIM = 15
GRAVITY = np.array([0.0, 0.0, -9.81])
MAX_CONDITION = 1e12
_I3 = np.eye(3)
_I15 = np.eye(STATE_DIM)


class RejectedSample(ValueError):
    """An IMU sample that cannot be integrated; the state is left untouched."""


class UpdateOutcome(str, enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"  # failed the chi-square gate
    SKIPPED = "skipped"  # numerically unusable innovation covariance, or strict mode
    NOT_ATTEMPTED = "none"  # leg not in stance


@dataclass(frozen=True)
class NominalState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def is_valid(self) -> bool:
        vecs = (self.p, self.v, self.b_a, self.b_g)
        return all(np.all(np.isfinite(x)) for x in vecs) and is_rotation(self.R)


@dataclass(frozen=True)
class ImuSample:
    t: float
    a_raw: np.ndarray
    omega_raw: np.ndarray


@dataclass(frozen=True)
class NoiseParams:
    """Continuous-time noise densities; ``Q_c`` is their squares on the diagonal."""

    sigma_a: float = 0.02  # m/s^2/sqrt(Hz)
    sigma_g: float = 0.002  # rad/s/sqrt(Hz)
    sigma_ba: float = 1e-3  # m/s^3/sqrt(Hz)
    sigma_bg: float = 1e-4  # rad/s^2/sqrt(Hz)
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)

    def __post_init__(self):
        if min(self.sigma_a, self.sigma_g, self.sigma_ba, self.sigma_bg) <= 0.0:
            raise ValueError("noise densities must be positive")

    def q_c(self) -> np.ndarray:
        d = np.repeat([self.sigma_a, self.sigma_g, self.sigma_ba, self.sigma_bg], 3) ** 2
        return np.diag(d)


@dataclass(frozen=True)
class GateConfig:
    gamma_95: float = 7.815  # chi-square, 3 dof, 95 %

    def __post_init__(self):
        if self.gamma_95 <= 0.0:
            raise ValueError("gamma_95 must be positive")


@dataclass
class UpdateResult:
    outcome: UpdateOutcome
    innovation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # squared Mahalanobis distance nu^T S^-1 nu, the quantity compared to gamma_95
    mahalanobis: float = float("nan")
    message: str = ""


@dataclass
class StepReport:
    t: float
    updates: dict = field(default_factory=dict)  # LegId -> UpdateResult


def initial_covariance(
    sigma_p: float = 0.1,
    sigma_v: float = 0.1,
    sigma_theta: float = 0.01,
    sigma_ba: float = 0.05,
    sigma_bg: float = 0.01,
) -> np.ndarray:
    d = np.repeat([sigma_p, sigma_v, sigma_theta, sigma_ba, sigma_bg], 3) ** 2
    return np.diag(d)


def gravity_alignment(accels) -> np.ndarray:
    """Roll/pitch from mean specific force while static; yaw is set to zero."""
    f = np.mean(np.atleast_2d(np.asarray(accels, dtype=float)), axis=0)
    roll = math.atan2(f[1], f[2])
    pitch = math.atan2(-f[0], math.hypot(f[1], f[2]))
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Ry @ Rx


def error_dynamics(R: np.ndarray, a_body: np.ndarray, omega_body: np.ndarray):
    """Continuous error dynamics ``F_c`` (15x15) and noise input ``G`` (15x12)."""
    F = np.zeros((STATE_DIM, STATE_DIM))
    F[P_, V_] = _I3
    F[V_, TH_] = -R @ skew(a_body)
    F[V_, BA_] = -R
    F[TH_, TH_] = -skew(omega_body)
    F[TH_, BG_] = -_I3
    G = np.zeros((STATE_DIM, 12))
    G[V_, 0:3] = -R
    G[TH_, 3:6] = -_I3
    G[BA_, 6:9] = _I3
    G[BG_, 9:12] = _I3
    return F, G


def propagate(state: NominalState, P: np.ndarray, imu: ImuSample, dt: float, noise: NoiseParams):
    """Euler-integrate the nominal state over ``dt`` and propagate ``P``.

    Raises ``RejectedSample`` for a non-positive ``dt`` or non-finite IMU data.
    """
    if not (dt > 0.0) or not math.isfinite(dt):
        raise RejectedSample(f"non-positive time step dt={dt!r} at t={imu.t!r}")
    a_raw = np.asarray(imu.a_raw, dtype=float)
    w_raw = np.asarray(imu.omega_raw, dtype=float)
    if not (np.all(np.isfinite(a_raw)) and np.all(np.isfinite(w_raw))):
        raise RejectedSample(f"non-finite IMU sample at t={imu.t!r}")

    a = a_raw - state.b_a
    w = w_raw - state.b_g
    R = state.R
    g = np.asarray(noise.gravity, dtype=float)

    F_c, G = error_dynamics(R, a, w)
    F_d = _I15 + F_c * dt
    Q_d = G @ noise.q_c() @ G.T * dt
    P_new = F_d @ P @ F_d.T + Q_d
    P_new = 0.5 * (P_new + P_new.T)

    new = replace(
        state,
        p=state.p + state.v * dt,
        v=state.v + (R @ a + g) * dt,
        R=R @ exp_map(w * dt),
        t=state.t + dt,
    )
    return new, P_new


def measurement_model(state: NominalState, v_rel) -> np.ndarray:
    """Predicted world-frame velocity of a foot: ``v + R v_rel``."""
    return state.v + state.R @ np.asarray(v_rel, dtype=float)


def measurement_jacobian(state: NominalState, v_rel, p_foot_B) -> np.ndarray:
    """3x15 Jacobian ``[0 | I | -R[v_rel]x | 0 | R[p_foot]x]``."""
    H = np.zeros((3, STATE_DIM))
    H[:, V_] = _I3
    H[:, TH_] = -state.R @ skew(v_rel)
    H[:, BG_] = state.R @ skew(p_foot_B)
    return H


def inject(state: NominalState, dx: np.ndarray) -> NominalState:
    return replace(
        state,
        p=state.p + dx[P_],
        v=state.v + dx[V_],
        R=state.R @ exp_map(dx[TH_]),
        b_a=state.b_a + dx[BA_],
        b_g=state.b_g + dx[BG_],
    )


def zupt_update(state, P, v_rel, p_foot_B, R_meas, gate: GateConfig = GateConfig()):
    """Zero-velocity update for one stance foot.

    Returns ``(state, P, UpdateResult)``.  Gated or numerically unusable
    updates leave ``state`` and ``P`` untouched; nothing here raises.
    """
    h = measurement_model(state, v_rel)
    nu = -h
    H = measurement_jacobian(state, v_rel, p_foot_B)
    R_meas = np.asarray(R_meas, dtype=float)
    PHt = P @ H.T
    S = H @ PHt + R_meas
    S = 0.5 * (S + S.T)

    if not np.all(np.isfinite(S)):
        return state, P, UpdateResult(UpdateOutcome.SKIPPED, nu, message="non-finite S")
    eig = np.linalg.eigvalsh(S)
    if eig[0] <= 0.0 or eig[-1] / eig[0] > MAX_CONDITION:
        return state, P, UpdateResult(
            UpdateOutcome.SKIPPED, nu, message=f"ill-conditioned S (eigenvalues {eig})"
        )
    S_inv = np.linalg.inv(S)
    d2 = float(nu @ S_inv @ nu)
    if d2 > gate.gamma_95:
        return state, P, UpdateResult(UpdateOutcome.REJECTED, nu, d2)

    K = PHt @ S_inv
    dx = K @ nu
    A = _I15 - K @ H
    P_new = A @ P @ A.T + K @ R_meas @ K.T
    P_new = 0.5 * (P_new + P_new.T)
    return inject(state, dx), P_new, UpdateResult(UpdateOutcome.ACCEPTED, nu, d2)


@dataclass(frozen=True)
class LegInput:
    """What a stance update needs from one leg: foot position and relative velocity."""

    leg_id: object
    p_foot_B: np.ndarray
    v_rel: np.ndarray


def apply_updates(state, P, legs, assessments, gate: GateConfig = GateConfig(), strict=False):
    """Sequential ZUPTs over ``legs`` (already in FL, FR, RL, RR order)."""
    results = {}
    for leg, a in zip(legs, assessments):
        if not a.stance_gate:
            results[leg.leg_id] = UpdateResult(UpdateOutcome.NOT_ATTEMPTED)
            continue
        if strict and a.q_glrt == 0.0:
            results[leg.leg_id] = UpdateResult(
                UpdateOutcome.SKIPPED, message="strict mode: kinematically moving"
            )
            continue
        state, P, res = zupt_update(state, P, leg.v_rel, leg.p_foot_B, a.R_meas, gate)
        results[leg.leg_id] = res
    return state, P, results


def step(state, P, imu: ImuSample, legs, assessments, noise: NoiseParams, gate=GateConfig(),
         dt=None, strict=False):
    """One propagate followed by a ZUPT for every leg whose assessment says stance.

    ``legs`` is a sequence of ``LegInput``; ``assessments`` the matching
    contact assessments (anything with ``stance_gate``, ``q_glrt`` and
    ``R_meas``).  ``dt`` defaults to ``imu.t - state.t``.
    """
    if dt is None:
        dt = imu.t - state.t
    state, P = propagate(state, P, imu, dt, noise)
    state, P, results = apply_updates(state, P, legs, assessments, gate, strict)
    return state, P, StepReport(t=state.t, updates=results)
