"""Serial 3-DOF leg model: foot position, velocity Jacobian, relative foot velocity.

Chain convention (body frame, x forward, y left, z up)::

    p = hip_offset + Rx(s1*q1) @ ( [0, s1*l_hip, 0]
                                   + Ry(s2*q2) @ ( [0, 0, -l_thigh]
                                                   + Ry(s3*q3) @ [0, 0, -(l_calf + foot_radius)] ) )

``q1`` is hip abduction about x, ``q2`` hip flexion about y, ``q3`` the knee
about y.  ``s1`` also selects the lateral side of the hip link (+1 left, -1
right), so a right leg is the y-mirror of a left leg for identical joint
angles.  With all angles zero the leg hangs straight down.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class LegId(str, enum.Enum):
    FL = "FL"
    FR = "FR"
    RL = "RL"
    RR = "RR"


LEG_ORDER: tuple[LegId, ...] = (LegId.FL, LegId.FR, LegId.RL, LegId.RR)

MAX_JOINT_SPEED = 100.0  # rad/s; faster samples are treated as sensor faults


@dataclass(frozen=True)
class LegModel:
    leg_id: LegId
    hip_offset: np.ndarray
    link_lengths: tuple[float, float, float]  # (l_hip, l_thigh, l_calf) [m]
    axis_signs: tuple[int, int, int] = (1, 1, 1)
    foot_radius: float = 0.0
    # per-joint (lo, hi) limits in radians; None disables the check
    joint_limits: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "leg_id", LegId(self.leg_id))
        hip = np.asarray(self.hip_offset, dtype=float).reshape(3)
        if not np.all(np.isfinite(hip)):
            raise ValueError(f"{self.leg_id.value}: hip_offset must be finite")
        object.__setattr__(self, "hip_offset", hip)
        lengths = tuple(float(v) for v in self.link_lengths)
        if len(lengths) != 3 or min(lengths) <= 0.0:
            raise ValueError(f"{self.leg_id.value}: link lengths must be three positive values")
        object.__setattr__(self, "link_lengths", lengths)
        signs = tuple(int(s) for s in self.axis_signs)
        if len(signs) != 3 or any(s not in (-1, 1) for s in signs):
            raise ValueError(f"{self.leg_id.value}: axis signs must be +1/-1")
        object.__setattr__(self, "axis_signs", signs)
        if self.foot_radius < 0.0:
            raise ValueError("foot_radius must be non-negative")
        if self.joint_limits is not None:
            limits = tuple((float(lo), float(hi)) for lo, hi in self.joint_limits)
            if len(limits) != 3 or any(lo > hi for lo, hi in limits):
                raise ValueError("joint_limits must be three (lo, hi) pairs")
            object.__setattr__(self, "joint_limits", limits)

    @property
    def reach(self) -> float:
        l_hip, l_thigh, l_calf = self.link_lengths
        return l_hip + l_thigh + l_calf + self.foot_radius


@dataclass(frozen=True)
class JointState:
    q: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_dot: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def is_valid(self) -> bool:
        q = np.asarray(self.q, dtype=float)
        qd = np.asarray(self.q_dot, dtype=float)
        return bool(
            np.all(np.isfinite(q))
            and np.all(np.isfinite(qd))
            and np.max(np.abs(qd)) < MAX_JOINT_SPEED
        )


# Go2-class geometry; see README for the source of these numbers.
GO2_HIP_X = 0.1934
GO2_HIP_Y = 0.0465
GO2_LINKS = (0.0955, 0.213, 0.213)
GO2_JOINT_LIMITS = ((-1.0472, 1.0472), (-1.5708, 3.4907), (-2.7227, 0.0))


def default_legs() -> list[LegModel]:
    """Four Go2-class legs in ``LEG_ORDER``."""
    legs = []
    for leg in LEG_ORDER:
        sx = 1.0 if leg in (LegId.FL, LegId.FR) else -1.0
        sy = 1 if leg in (LegId.FL, LegId.RL) else -1
        legs.append(
            LegModel(
                leg_id=leg,
                hip_offset=np.array([sx * GO2_HIP_X, sy * GO2_HIP_Y, 0.0]),
                link_lengths=GO2_LINKS,
                axis_signs=(sy, 1, 1),
                joint_limits=GO2_JOINT_LIMITS,
            )
        )
    return legs


def foot_position_and_jacobian(model: LegModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Foot position [m] and its 3x3 Jacobian wrt q [m/rad], body frame."""
    l_hip, l_thigh, l_calf = model.link_lengths
    l_calf += model.foot_radius
    s1, s2, s3 = model.axis_signs
    a = s1 * float(q[0])
    b = s2 * float(q[1])
    c = s3 * float(q[2])
    ca, sa = math.cos(a), math.sin(a)
    sb, cb = math.sin(b), math.cos(b)
    sbc, cbc = math.sin(b + c), math.cos(b + c)
    ly = s1 * l_hip

    ux = -l_thigh * sb - l_calf * sbc
    uz = -l_thigh * cb - l_calf * cbc
    h = model.hip_offset
    p = np.array([h[0] + ux, h[1] + ca * ly - sa * uz, h[2] + sa * ly + ca * uz])

    # d(ux, uz)/db = (uz, -ux); d(ux, uz)/dc = (-l_calf cos(b+c), l_calf sin(b+c))
    dux_dc = -l_calf * cbc
    duz_dc = l_calf * sbc
    J = np.array(
        [
            [0.0, s2 * uz, s3 * dux_dc],
            [s1 * (-sa * ly - ca * uz), s2 * (sa * ux), s3 * (-sa * duz_dc)],
            [s1 * (ca * ly - sa * uz), s2 * (-ca * ux), s3 * (ca * duz_dc)],
        ]
    )
    return p, J


def forward_kinematics(model: LegModel, q) -> np.ndarray:
    return foot_position_and_jacobian(model, q)[0]


def velocity_jacobian(model: LegModel, q) -> np.ndarray:
    return foot_position_and_jacobian(model, q)[1]


def relative_foot_velocity(model: LegModel, js: JointState, omega_body) -> np.ndarray:
    """Foot velocity relative to the body, in body axes: ``w x fk(q) + J(q) q_dot``."""
    p, J = foot_position_and_jacobian(model, js.q)
    return np.cross(np.asarray(omega_body, dtype=float), p) + J @ np.asarray(js.q_dot, dtype=float)


def forward_kinematics_batch(model: LegModel, q: np.ndarray) -> np.ndarray:
    """Vectorized ``forward_kinematics`` over an ``(N, 3)`` array of joint angles."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    l_hip, l_thigh, l_calf = model.link_lengths
    l_calf += model.foot_radius
    s1, s2, s3 = model.axis_signs
    a, b, c = s1 * q[:, 0], s2 * q[:, 1], s3 * q[:, 2]
    ly = s1 * l_hip
    ux = -l_thigh * np.sin(b) - l_calf * np.sin(b + c)
    uz = -l_thigh * np.cos(b) - l_calf * np.cos(b + c)
    ca, sa = np.cos(a), np.sin(a)
    return model.hip_offset + np.stack([ux, ca * ly - sa * uz, sa * ly + ca * uz], axis=1)


def velocity_jacobian_batch(model: LegModel, q: np.ndarray) -> np.ndarray:
    """Vectorized ``velocity_jacobian``; returns ``(N, 3, 3)``."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    l_hip, l_thigh, l_calf = model.link_lengths
    l_calf += model.foot_radius
    s1, s2, s3 = model.axis_signs
    a, b, c = s1 * q[:, 0], s2 * q[:, 1], s3 * q[:, 2]
    ly = s1 * l_hip
    ux = -l_thigh * np.sin(b) - l_calf * np.sin(b + c)
    uz = -l_thigh * np.cos(b) - l_calf * np.cos(b + c)
    ca, sa = np.cos(a), np.sin(a)
    dux_dc = -l_calf * np.cos(b + c)
    duz_dc = l_calf * np.sin(b + c)
    J = np.empty((q.shape[0], 3, 3))
    J[:, 0, 0] = 0.0
    J[:, 0, 1] = s2 * uz
    J[:, 0, 2] = s3 * dux_dc
    J[:, 1, 0] = s1 * (-sa * ly - ca * uz)
    J[:, 1, 1] = s2 * sa * ux
    J[:, 1, 2] = -s3 * sa * duz_dc
    J[:, 2, 0] = s1 * (ca * ly - sa * uz)
    J[:, 2, 1] = -s2 * ca * ux
    J[:, 2, 2] = s3 * ca * duz_dc
    return J
