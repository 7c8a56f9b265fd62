"""Kinematic quadruped gait simulator.

Produces a ground-truth body trajectory plus mutually consistent IMU, joint
and foot-force streams.  Stance feet are pinned to world anchors (exactly
zero velocity) unless a slip event drags the anchor; swing feet follow a
minimum-jerk arc.  Joint angles come from closed-form inverse kinematics and
joint rates from the inverse Jacobian, so the estimator's kinematic model
reproduces the true foot motion to round-off.

Time layout of a ``TROT`` sequence: ``settle_time`` seconds of four-leg
standing (the estimator aligns gravity there), then the gait clock starts and
the body accelerates smoothly over ``ramp_time`` seconds to its commanded
speed and keeps going for ``duration`` seconds of gait time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .eskf import GRAVITY, ImuSample
from .kinematics import (
    LEG_ORDER,
    LegId,
    LegModel,
    default_legs,
    velocity_jacobian_batch,
)
from .metrics import Trajectory

# phase offsets of the trot: diagonal pairs move together
TROT_OFFSETS = {LegId.FL: 0.0, LegId.RR: 0.0, LegId.FR: 0.5, LegId.RL: 0.5}
FORCE_RAMP_MAX = 0.05  # s, longest load/unload ramp of a stance
_LIMIT_TOL = 1e-9


class SimConfigError(ValueError):
    """Invalid simulation configuration, raised before any data is generated."""


class UnreachableTarget(SimConfigError):
    pass


class Gait(str, enum.Enum):
    STAND = "STAND"
    TROT = "TROT"


@dataclass(frozen=True)
class SlipEvent:
    t_start: float
    t_end: float
    leg_id: LegId
    velocity: tuple[float, float, float]  # world frame [m/s]

    def __post_init__(self):
        object.__setattr__(self, "leg_id", LegId(self.leg_id))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if len(self.velocity) != 3 or not all(math.isfinite(v) for v in self.velocity):
            raise SimConfigError("slip velocity must be a finite 3-vector")
        if not (self.t_end > self.t_start >= 0.0):
            raise SimConfigError(f"slip event needs 0 <= t_start < t_end, got {self.t_start}, {self.t_end}")


@dataclass(frozen=True)
class SensorNoise:
    """White-noise densities, constant biases and per-sample sensor noise.

    ``sigma_a``/``sigma_g`` are continuous densities (same units as the
    filter's noise parameters); the per-sample standard deviation is the
    density times ``sqrt(imu_rate)``.  Zero everywhere means noiseless.
    """

    sigma_a: float = 0.0
    sigma_g: float = 0.0
    accel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    force_sigma: float = 0.0  # N
    joint_sigma: float = 0.0  # rad
    joint_vel_sigma: float = 0.0  # rad/s

    def __post_init__(self):
        for name in ("sigma_a", "sigma_g", "force_sigma", "joint_sigma", "joint_vel_sigma"):
            if not getattr(self, name) >= 0.0:
                raise SimConfigError(f"{name} must be non-negative")
        object.__setattr__(self, "accel_bias", tuple(float(v) for v in self.accel_bias))
        object.__setattr__(self, "gyro_bias", tuple(float(v) for v in self.gyro_bias))


@dataclass(frozen=True)
class GaitConfig:
    gait: Gait = Gait.TROT
    body_speed: tuple[float, float, float] = (0.5, 0.0, 0.0)  # body frame [m/s]
    yaw_rate: float = 0.0  # rad/s
    step_frequency: float = 2.0  # Hz
    duty_factor: float = 0.6
    step_height: float = 0.08  # m
    duration: float = 60.0  # s of gait (TROT) or of standing (STAND)
    imu_rate: float = 500.0
    noise: SensorNoise = SensorNoise()
    stance_force_mean: float = 75.0  # N, peak load of a trotting stance foot
    slip_events: tuple[SlipEvent, ...] = ()
    rng_seed: int = 0
    settle_time: float = 1.0  # s of four-leg standing before the gait starts
    ramp_time: float = 1.0  # s to reach body_speed
    body_height: float = 0.30  # m, hip plane above the ground

    def __post_init__(self):
        object.__setattr__(self, "gait", Gait(self.gait))
        object.__setattr__(self, "body_speed", tuple(float(v) for v in self.body_speed))
        events = tuple(e if isinstance(e, SlipEvent) else SlipEvent(**e) for e in self.slip_events)
        object.__setattr__(self, "slip_events", events)
        if len(self.body_speed) != 3:
            raise SimConfigError("body_speed must have three components")
        if not (self.imu_rate > 0.0 and self.step_frequency > 0.0):
            raise SimConfigError("rates must be positive")
        if not self.duration > 0.0:
            raise SimConfigError("duration must be positive")
        if self.settle_time < 0.0 or self.ramp_time <= 0.0 or self.body_height <= 0.0:
            raise SimConfigError("settle_time >= 0, ramp_time > 0 and body_height > 0 required")
        if self.step_height < 0.0 or self.stance_force_mean <= 0.0:
            raise SimConfigError("step_height must be >= 0 and stance_force_mean > 0")
        if self.gait is Gait.TROT and not (0.5 < self.duty_factor <= 0.9):
            raise SimConfigError(f"trot duty factor must lie in (0.5, 0.9], got {self.duty_factor}")
        if self.gait is Gait.STAND and (any(self.body_speed) or self.yaw_rate):
            raise SimConfigError("STAND requires zero body_speed and yaw_rate")

    @property
    def total_time(self) -> float:
        if self.gait is Gait.STAND:
            return self.duration
        return self.settle_time + self.duration

    @property
    def n_samples(self) -> int:
        return int(round(self.total_time * self.imu_rate)) + 1


@dataclass
class SimOutput:
    t: np.ndarray
    ground_truth: Trajectory
    v_true: np.ndarray  # (N, 3) world body velocity
    imu_a: np.ndarray  # (N, 3) accelerometer
    imu_w: np.ndarray  # (N, 3) gyroscope
    q: dict = field(default_factory=dict)  # LegId -> (N, 3)
    q_dot: dict = field(default_factory=dict)
    force: dict = field(default_factory=dict)  # LegId -> (N,)
    stance: dict = field(default_factory=dict)  # LegId -> bool (N,)
    slipping: dict = field(default_factory=dict)
    foot_world: dict = field(default_factory=dict)  # true foot positions
    foot_world_vel: dict = field(default_factory=dict)
    config: GaitConfig | None = None

    @property
    def imu_stream(self) -> list[ImuSample]:
        return [ImuSample(float(t), a, w) for t, a, w in zip(self.t, self.imu_a, self.imu_w)]

    def leg_stream(self, leg: LegId):
        from .dataset_io import LegMeasurement

        leg = LegId(leg)
        return [
            LegMeasurement(float(t), leg, q, qd, float(f))
            for t, q, qd, f in zip(self.t, self.q[leg], self.q_dot[leg], self.force[leg])
        ]

    @property
    def leg_streams(self) -> dict:
        return {leg: self.leg_stream(leg) for leg in LEG_ORDER}

    def contact_truth(self, leg: LegId):
        leg = LegId(leg)
        return [
            (float(t), "STANCE" if s else "SWING", bool(sl))
            for t, s, sl in zip(self.t, self.stance[leg], self.slipping[leg])
        ]


# ----------------------------------------------------------------- inverse kinematics


def inverse_kinematics_batch(model: LegModel, p_target) -> np.ndarray:
    """Closed-form IK for an ``(N, 3)`` array of body-frame foot targets.

    Picks the knee-backward branch (``s3 * q3 <= 0``).  Raises
    ``UnreachableTarget`` if any target lies outside the reach annulus or
    outside the joint limits of ``model``.
    """
    P = np.atleast_2d(np.asarray(p_target, dtype=float))
    l_hip, l_thigh, l_calf = model.link_lengths
    l_calf += model.foot_radius
    s1, s2, s3 = model.axis_signs
    d = P - model.hip_offset
    ly = s1 * l_hip

    r2 = d[:, 1] ** 2 + d[:, 2] ** 2 - l_hip**2
    L2 = d[:, 0] ** 2 + np.maximum(r2, 0.0)
    cos_c = (L2 - l_thigh**2 - l_calf**2) / (2.0 * l_thigh * l_calf)
    bad = (r2 < -1e-12) | (cos_c > 1.0 + 1e-12) | (cos_c < -1.0 - 1e-12)
    if np.any(bad):
        i = int(np.argmax(bad))
        dist = float(np.linalg.norm(d[i]))
        raise UnreachableTarget(
            f"leg {model.leg_id.value}: foot target {P[i].tolist()} is out of reach "
            f"(distance from hip {dist:.4f} m, max reach {model.reach:.4f} m, "
            f"min lateral offset {l_hip:.4f} m)"
        )
    uz = -np.sqrt(np.maximum(r2, 0.0))
    a = np.arctan2(d[:, 2], d[:, 1]) - np.arctan2(uz, ly)
    a = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    c = -np.arccos(np.clip(cos_c, -1.0, 1.0))
    b = np.arctan2(-d[:, 0], -uz) - np.arctan2(l_calf * np.sin(c), l_thigh + l_calf * np.cos(c))
    q = np.stack([a / s1, b / s2, c / s3], axis=1)

    if model.joint_limits is not None:
        lo = np.array([lim[0] for lim in model.joint_limits]) - _LIMIT_TOL
        hi = np.array([lim[1] for lim in model.joint_limits]) + _LIMIT_TOL
        out = np.any((q < lo) | (q > hi), axis=1)
        if np.any(out):
            i = int(np.argmax(out))
            raise UnreachableTarget(
                f"leg {model.leg_id.value}: foot target {P[i].tolist()} needs joint angles "
                f"{q[i].tolist()} outside limits {model.joint_limits}"
            )
    return q


def inverse_kinematics_3dof(model: LegModel, p_target_B) -> np.ndarray:
    """Joint angles placing the foot at ``p_target_B`` (body frame)."""
    return inverse_kinematics_batch(model, np.asarray(p_target_B, dtype=float).reshape(1, 3))[0]


# ----------------------------------------------------------------- body motion


def _progress(cfg: GaitConfig, t: np.ndarray):
    """Gait progress sigma(t) and its first two derivatives.

    sigma is 0 while settling, then follows the speed ramp
    ``s(u) = 80u^3 - 225u^4 + 216u^5 - 70u^6``: zero speed, acceleration
    and jerk at the start, unit speed with zero acceleration and jerk at the
    end, unit mean so sigma equals elapsed gait time once the ramp is over.
    """
    tau = t - (cfg.settle_time if cfg.gait is Gait.TROT else 0.0)
    Tr = cfg.ramp_time
    sig = np.zeros_like(t)
    sd = np.zeros_like(t)
    sdd = np.zeros_like(t)
    ramp = (tau > 0.0) & (tau < Tr)
    u = tau[ramp] / Tr
    sig[ramp] = Tr * (20.0 * u**4 - 45.0 * u**5 + 36.0 * u**6 - 10.0 * u**7)
    sd[ramp] = 80.0 * u**3 - 225.0 * u**4 + 216.0 * u**5 - 70.0 * u**6
    sdd[ramp] = (240.0 * u**2 - 900.0 * u**3 + 1080.0 * u**4 - 420.0 * u**5) / Tr
    done = tau >= Tr
    sig[done] = tau[done]
    sd[done] = 1.0
    return sig, sd, sdd


def body_motion(cfg: GaitConfig, t: np.ndarray):
    """Body position, velocity, acceleration (world), yaw and yaw rate."""
    t = np.asarray(t, dtype=float)
    if cfg.gait is Gait.STAND:
        z = np.zeros((t.size, 3))
        return z, z.copy(), z.copy(), np.zeros(t.size), np.zeros(t.size)
    sig, sd, sdd = _progress(cfg, t)
    w = cfg.yaw_rate
    ux, uy, uz = cfg.body_speed
    yaw = w * sig
    c, s = np.cos(yaw), np.sin(yaw)
    P = np.empty((t.size, 3))
    if abs(w) < 1e-12:
        P[:, 0] = ux * sig
        P[:, 1] = uy * sig
    else:
        P[:, 0] = (s * ux + (c - 1.0) * uy) / w
        P[:, 1] = ((1.0 - c) * ux + s * uy) / w
    P[:, 2] = uz * sig
    dP = np.stack([c * ux - s * uy, s * ux + c * uy, np.full(t.size, uz)], axis=1)
    ddP = np.stack([-w * dP[:, 1], w * dP[:, 0], np.zeros(t.size)], axis=1)
    v = dP * sd[:, None]
    a = ddP * (sd**2)[:, None] + dP * sdd[:, None]
    return P, v, a, yaw, w * sd


def _rotations(yaw: np.ndarray) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    R = np.zeros((yaw.size, 3, 3))
    R[:, 0, 0], R[:, 0, 1] = c, -s
    R[:, 1, 0], R[:, 1, 1] = s, c
    R[:, 2, 2] = 1.0
    return R


# ----------------------------------------------------------------- foot schedule


def stance_intervals(cfg: GaitConfig, leg: LegId, t_end: float) -> list[tuple[float, float]]:
    """Stance intervals ``[t0, t1)`` of one leg covering ``[0, t_end]``."""
    if cfg.gait is Gait.STAND:
        return [(0.0, math.inf)]
    T = 1.0 / cfg.step_frequency
    phi = TROT_OFFSETS[LegId(leg)]
    t0 = cfg.settle_time
    out = []
    start = 0.0
    n = 0
    while start <= t_end:
        lift = t0 + (n + cfg.duty_factor - phi) * T
        out.append((start, lift))
        start = t0 + (n + 1.0 - phi) * T
        n += 1
    return out


def _minjerk(u):
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2), 30.0 * u**2 * (1.0 - u) ** 2


def _bump(u):
    return 64.0 * u**3 * (1.0 - u) ** 3, 192.0 * u**2 * (1.0 - u) ** 2 * (1.0 - 2.0 * u)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _nominal_foot(cfg: GaitConfig, model: LegModel) -> np.ndarray:
    s1 = model.axis_signs[0]
    return model.hip_offset + np.array([0.0, s1 * model.link_lengths[0], -cfg.body_height])


def _foot_track(cfg, model, t, body_p, yaw):
    """World foot position/velocity, stance and slip flags, and load envelope."""
    leg = model.leg_id
    n = t.size
    stances = stance_intervals(cfg, leg, float(t[-1]))
    st = np.array(stances)
    nominal = _nominal_foot(cfg, model)

    # anchors: body pose at mid-stance composed with the nominal foot
    mid = np.where(np.isfinite(st[:, 1]), 0.5 * (st[:, 0] + st[:, 1]), st[:, 0])
    mp, _, _, myaw, _ = body_motion(cfg, mid)
    anchors = mp + np.einsum("nij,j->ni", _rotations(myaw), nominal)

    events = [e for e in cfg.slip_events if e.leg_id is leg]
    # total slip displacement accumulated over each stance
    disp_end = np.zeros((len(stances), 3))
    for e in events:
        ov = np.clip(np.minimum(st[:, 1], e.t_end) - np.maximum(st[:, 0], e.t_start), 0.0, None)
        disp_end += ov[:, None] * np.array(e.velocity)

    bounds = st.ravel()  # s0, l0, s1, l1, ... alternating stance start / liftoff
    seg = np.searchsorted(bounds, t, side="right") - 1
    stance = (seg % 2) == 0
    k = seg // 2

    pos = np.empty((n, 3))
    vel = np.zeros((n, 3))
    slipping = np.zeros(n, dtype=bool)

    ks = k[stance]
    ts = t[stance]
    s_start = st[ks, 0]
    disp = np.zeros((ts.size, 3))
    svel = np.zeros((ts.size, 3))
    sl = np.zeros(ts.size, dtype=bool)
    for e in events:
        ov = np.clip(np.minimum(ts, e.t_end) - np.maximum(e.t_start, s_start), 0.0, None)
        disp += ov[:, None] * np.array(e.velocity)
        active = (ts >= e.t_start) & (ts < e.t_end)
        svel[active] += np.array(e.velocity)
        sl |= active
    pos[stance] = anchors[ks] + disp
    vel[stance] = svel
    slipping[stance] = sl

    sw = ~stance
    kw = k[sw]
    if kw.size:
        t_lo = st[kw, 1]
        t_td = st[kw + 1, 0]
        Ts = t_td - t_lo
        u = (t[sw] - t_lo) / Ts
        A = anchors[kw] + disp_end[kw]
        B = anchors[kw + 1]
        m, dm = _minjerk(u)
        h, dh = _bump(u)
        pos[sw] = A + (B - A) * m[:, None]
        pos[sw, 2] += cfg.step_height * h
        vel[sw] = ((B - A) * dm[:, None]) / Ts[:, None]
        vel[sw, 2] += cfg.step_height * dh / Ts

    # load envelope of stance samples, smooth ramps at touchdown and liftoff
    env = np.zeros(n)
    s_end = st[ks, 1]
    ramp = np.minimum(0.25 * (s_end - s_start), FORCE_RAMP_MAX)
    up = np.where(s_start > 0.0, (ts - s_start) / ramp, 1.0)
    down = np.where(np.isfinite(s_end), (s_end - ts) / ramp, 1.0)
    env[stance] = _smoothstep(np.minimum(up, down))
    return pos, vel, stance, slipping, env


def _force_level(cfg: GaitConfig, t: np.ndarray) -> np.ndarray:
    """Load per stance foot: half the trot peak while all four feet carry the body."""
    half = 0.5 * cfg.stance_force_mean
    if cfg.gait is Gait.STAND:
        return np.full(t.size, half)
    blend = _smoothstep((t - cfg.settle_time) / FORCE_RAMP_MAX)
    return half + (cfg.stance_force_mean - half) * blend


# ----------------------------------------------------------------- simulator


def simulate(cfg: GaitConfig, legs: list[LegModel] | None = None) -> SimOutput:
    """Generate one synthetic sequence; bit-reproducible for a given config."""
    legs = default_legs() if legs is None else list(legs)
    if sorted(m.leg_id.value for m in legs) != sorted(l.value for l in LEG_ORDER):
        raise SimConfigError("need exactly one model per leg FL, FR, RL, RR")
    by_id = {m.leg_id: m for m in legs}

    t = np.arange(cfg.n_samples) / cfg.imu_rate
    p, v, a, yaw, yaw_rate = body_motion(cfg, t)
    R = _rotations(yaw)
    omega_B = np.zeros((t.size, 3))
    omega_B[:, 2] = yaw_rate

    level = _force_level(cfg, t)
    kin = {}
    # all inverse kinematics first: an unreachable target aborts before any noise is drawn
    for leg in LEG_ORDER:
        model = by_id[leg]
        pw, vw, stance, slipping, env = _foot_track(cfg, model, t, p, yaw)
        pB = np.einsum("nji,nj->ni", R, pw - p)
        vB = np.einsum("nji,nj->ni", R, vw - v) - np.cross(omega_B, pB)
        try:
            q = inverse_kinematics_batch(model, pB)
        except UnreachableTarget as exc:
            raise UnreachableTarget(
                f"gait outside the leg's reach: {exc}; check step_height/body_height/body_speed"
            ) from None
        J = velocity_jacobian_batch(model, q)
        qd = np.linalg.solve(J, vB[:, :, None])[:, :, 0]
        kin[leg] = (q, qd, level * env, stance, slipping, pw, vw)

    nz = cfg.noise
    rng = np.random.default_rng(cfg.rng_seed)
    root_rate = math.sqrt(cfg.imu_rate)
    f_world = a - GRAVITY
    imu_a = np.einsum("nji,nj->ni", R, f_world)
    imu_a += np.asarray(nz.accel_bias) + nz.sigma_a * root_rate * rng.standard_normal((t.size, 3))
    imu_w = omega_B + np.asarray(nz.gyro_bias) + nz.sigma_g * root_rate * rng.standard_normal((t.size, 3))

    out = SimOutput(t=t, ground_truth=Trajectory(t, p, R), v_true=v, imu_a=imu_a, imu_w=imu_w,
                    config=cfg)
    for leg in LEG_ORDER:
        q, qd, F, stance, slipping, pw, vw = kin[leg]
        out.q[leg] = q + nz.joint_sigma * rng.standard_normal(q.shape)
        out.q_dot[leg] = qd + nz.joint_vel_sigma * rng.standard_normal(qd.shape)
        out.force[leg] = F + nz.force_sigma * rng.standard_normal(t.size)
        out.stance[leg] = stance
        out.slipping[leg] = slipping
        out.foot_world[leg] = pw
        out.foot_world_vel[leg] = vw
    return out


def slip_schedule(cfg: GaitConfig, n_events: int, speed: float = 1.0, seed: int = 0,
                  fraction: float = 0.5, t_min: float | None = None,
                  direction: float | None = None) -> tuple[SlipEvent, ...]:
    """Place ``n_events`` slips in the middle of randomly chosen trot stances.

    Each slip covers ``fraction`` of its stance, centred, with a horizontal
    velocity of magnitude ``speed``.  ``direction`` is the slip heading in
    radians relative to the body heading (``pi`` slides the foot backward);
    ``None`` draws a uniform random heading per event.  At most one event
    per stance; stances before ``t_min`` (default: end of the speed ramp) are
    skipped.
    """
    if cfg.gait is not Gait.TROT:
        raise SimConfigError("slip schedules are defined for trot sequences")
    rng = np.random.default_rng(seed)
    t_min = cfg.settle_time + cfg.ramp_time if t_min is None else t_min
    t_end = cfg.total_time
    pool = []
    for leg in LEG_ORDER:
        for t0, t1 in stance_intervals(cfg, leg, t_end):
            if t0 >= t_min and t1 <= t_end - 0.5:
                pool.append((t0, t1, leg))
    if n_events > len(pool):
        raise SimConfigError(f"only {len(pool)} stances available for {n_events} slips")
    picks = rng.choice(len(pool), size=n_events, replace=False)
    events = []
    for i in sorted(picks, key=lambda j: (pool[j][0], LEG_ORDER.index(pool[j][2]))):
        t0, t1, leg = pool[i]
        mid, half = 0.5 * (t0 + t1), 0.5 * fraction * (t1 - t0)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        if direction is not None:
            ang = direction + float(body_motion(cfg, np.array([mid]))[3][0])
        events.append(SlipEvent(mid - half, mid + half, leg,
                                (speed * math.cos(ang), speed * math.sin(ang), 0.0)))
    return tuple(events)


__all__ = [
    "Gait", "GaitConfig", "SensorNoise", "SlipEvent", "SimOutput", "SimConfigError",
    "UnreachableTarget", "simulate", "inverse_kinematics_3dof", "inverse_kinematics_batch",
    "body_motion", "stance_intervals", "slip_schedule",
]
