"""Soft-AND fusion of the two contact scores into an adaptive ZUPT covariance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contact_fsm import Phase

_I3 = np.eye(3)


@dataclass(frozen=True)
class FusionConfig:
    sigma_base: float = 1.0  # m/s, noise of an ideal stance
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.sigma_base <= 0.0 or self.epsilon <= 0.0:
            raise ValueError("sigma_base and epsilon must be positive")


@dataclass(frozen=True)
class ContactAssessment:
    leg_id: object
    fsm_phase: Phase
    q_fsm: float
    q_glrt: float
    q_final: float
    sigma_i: float
    R_meas: np.ndarray
    stance_gate: bool
    t_glrt: float = float("nan")


def adaptive_sigma(q_fsm: float, q_glrt: float, cfg: FusionConfig = FusionConfig()):
    """``(q_final, sigma_i)`` for the two scores."""
    if not (0.0 <= q_fsm <= 1.0 and 0.0 <= q_glrt <= 1.0):
        raise ValueError(f"quality scores must lie in [0, 1], got {q_fsm}, {q_glrt}")
    q_final = q_fsm * q_glrt
    return q_final, cfg.sigma_base / max(q_final, cfg.epsilon)


def fuse(q_fsm: float, q_glrt: float, fsm_phase: Phase, cfg: FusionConfig = FusionConfig(),
         leg_id=None, stance_gate: bool | None = None, t_glrt: float = float("nan")):
    """``q_final = q_fsm * q_glrt``; ``sigma_i = sigma_base / max(q_final, eps)``.

    The update is attempted only when ``stance_gate`` holds (by default: the
    debounced FSM says stance); ``R_meas = sigma_i^2 I`` carries the graded trust.
    """
    q_final, sigma = adaptive_sigma(q_fsm, q_glrt, cfg)
    if stance_gate is None:
        stance_gate = fsm_phase is Phase.STANCE
    return ContactAssessment(
        leg_id=leg_id,
        fsm_phase=fsm_phase,
        q_fsm=q_fsm,
        q_glrt=q_glrt,
        q_final=q_final,
        sigma_i=sigma,
        R_meas=(sigma * sigma) * _I3,
        stance_gate=stance_gate,
        t_glrt=t_glrt,
    )
