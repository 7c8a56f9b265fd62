"""Streaming estimator: contact detection, score fusion and the filter, per frame.

``Estimator.process`` consumes one merged frame (IMU sample + four leg
measurements) and returns nothing; poses and per-leg diagnostics accumulate
in preallocated arrays.  ``run_frames`` / ``run_dataset`` wrap the
initialization (gravity alignment over the first frames) and output writing.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config
from .contact_fsm import ForceContactDetector, Phase
from .contact_glrt import GlrtDetector
from .dataset_io import Frame, LegMeasurement, read_stream, write_trajectory
from .eskf import (
    MAX_CONDITION,
    ImuSample,
    LegInput,
    NominalState,
    RejectedSample,
    UpdateOutcome,
    gravity_alignment,
    initial_covariance,
    propagate,
    zupt_update,
)
from .fastpath import legs_kinematics, propagate_inplace, zupt_legs
from .fusion import FusionConfig, adaptive_sigma
from .kinematics import LEG_ORDER, MAX_JOINT_SPEED, foot_position_and_jacobian
from .metrics import Trajectory
from .so3 import orthonormalize

log = logging.getLogger(__name__)

OUTCOME_CODES = {
    UpdateOutcome.NOT_ATTEMPTED: 0,
    UpdateOutcome.ACCEPTED: 1,
    UpdateOutcome.REJECTED: 2,
    UpdateOutcome.SKIPPED: 3,
}
INVALID_CODE = 4  # leg sample failed sanity checks, no update
OUTCOME_NAMES = {v: k.value for k, v in OUTCOME_CODES.items()} | {INVALID_CODE: "invalid"}
DIAG_HEADER = "t,leg,fsm_phase,stance_gate,q_fsm,q_glrt,q_final,sigma,t_glrt,outcome,mahalanobis"


class Detector(str, enum.Enum):
    FSM = "fsm"
    GLRT = "glrt"
    FUSED = "fused"


class NumericalFailure(RuntimeError):
    """The filter state became non-finite or left SO(3)."""


@dataclass
class Diagnostics:
    """Per-step, per-leg traces; arrays are ``(n_steps, 4)`` in ``LEG_ORDER``."""

    t: np.ndarray
    fsm_stance: np.ndarray
    gate: np.ndarray
    q_fsm: np.ndarray
    q_glrt: np.ndarray
    q_final: np.ndarray
    sigma: np.ndarray
    t_glrt: np.ndarray
    outcome: np.ndarray
    mahalanobis: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "Diagnostics":
        f = lambda: np.full((n, 4), np.nan)  # noqa: E731
        return cls(
            t=np.full(n, np.nan), fsm_stance=np.zeros((n, 4), bool), gate=np.zeros((n, 4), bool),
            q_fsm=f(), q_glrt=f(), q_final=f(), sigma=f(), t_glrt=f(),
            outcome=np.zeros((n, 4), np.int8), mahalanobis=f(),
        )

    def truncated(self, n: int) -> "Diagnostics":
        return Diagnostics(**{k: v[:n] for k, v in self.__dict__.items()})

    def count(self, code: int) -> np.ndarray:
        return (self.outcome == code).sum(axis=0)

    def write_csv(self, path) -> None:
        """Long format: one row per step and leg."""
        def num(x):
            return "" if math.isnan(x) else repr(float(x))

        with open(path, "w") as fh:
            fh.write(DIAG_HEADER + "\n")
            for i in range(self.t.size):
                ts = repr(float(self.t[i]))
                for j, leg in enumerate(LEG_ORDER):
                    fh.write(",".join((
                        ts, leg.value,
                        "STANCE" if self.fsm_stance[i, j] else "SWING",
                        str(int(self.gate[i, j])),
                        num(self.q_fsm[i, j]), num(self.q_glrt[i, j]), num(self.q_final[i, j]),
                        num(self.sigma[i, j]), num(self.t_glrt[i, j]),
                        OUTCOME_NAMES[int(self.outcome[i, j])], num(self.mahalanobis[i, j]),
                    )) + "\n")


class Estimator:
    """One filter instance for one robot stream (single owner, not thread-safe).

    With ``fast=True`` (default) the numeric core runs in compiled kernels;
    ``fast=False`` uses the numpy reference functions of ``eskf`` and
    ``kinematics`` and produces the same results to round-off.
    """

    def __init__(self, cfg: Config, detector: Detector | str = Detector.FUSED,
                 sigma_base: float | None = None, capacity: int = 1024, executor=None,
                 refit_latency: int = 0, fast: bool = True):
        self.cfg = cfg
        self.detector = Detector(detector)
        self.fast = fast
        self.fusion = FusionConfig(
            sigma_base=cfg.fusion.sigma_base if sigma_base is None else sigma_base,
            epsilon=cfg.fusion.epsilon,
        )
        self.gate = cfg.gate
        self.legs = {m.leg_id: m for m in cfg.legs}
        models = [self.legs[leg] for leg in LEG_ORDER]
        self._hips = np.array([m.hip_offset for m in models], dtype=float)
        self._lengths = np.array(
            [[m.link_lengths[0], m.link_lengths[1], m.link_lengths[2] + m.foot_radius] for m in models]
        )
        self._signs = np.array([m.axis_signs for m in models], dtype=float)
        self._Q = np.zeros((4, 3))
        self._QD = np.zeros((4, 3))
        self._var = np.ones(4)
        self._attempt = np.zeros(4, dtype=bool)
        self.fsm = {leg: ForceContactDetector(cfg.fsm, executor, refit_latency) for leg in LEG_ORDER}
        self.glrt = {leg: GlrtDetector(cfg.glrt) for leg in LEG_ORDER}
        self._qc = np.repeat([cfg.noise.sigma_a, cfg.noise.sigma_g, cfg.noise.sigma_ba,
                              cfg.noise.sigma_bg], 3) ** 2
        self._g = np.asarray(cfg.noise.gravity, dtype=float)
        self._initialized = False
        self.steps = 0
        self._cap = capacity
        self._t = np.empty(capacity)
        self._p = np.empty((capacity, 3))
        self._R = np.empty((capacity, 3, 3))
        self.diag = Diagnostics.empty(capacity)

    # -- setup ------------------------------------------------------------

    def initialize(self, t0: float, accels) -> None:
        """Start at the origin with roll/pitch from the mean specific force."""
        fc = self.cfg.filter
        self.p = np.zeros(3)
        self.v = np.zeros(3)
        self.R = gravity_alignment(accels)
        self.b_a = np.zeros(3)
        self.b_g = np.zeros(3)
        self.t = float(t0)
        self.P = initial_covariance(fc.sigma_p, fc.sigma_v, fc.sigma_theta, fc.sigma_ba, fc.sigma_bg)
        self._initialized = True

    @property
    def state(self) -> NominalState:
        return NominalState(self.p.copy(), self.v.copy(), self.R.copy(), self.b_a.copy(),
                            self.b_g.copy(), self.t)

    def _set_state(self, s: NominalState) -> None:
        self.p, self.v, self.R = np.array(s.p, float), np.array(s.v, float), np.array(s.R, float)
        self.b_a, self.b_g = np.array(s.b_a, float), np.array(s.b_g, float)

    def _grow(self):
        self._cap *= 2
        self._t = np.resize(self._t, self._cap)
        self._p = np.resize(self._p, (self._cap, 3))
        self._R = np.resize(self._R, (self._cap, 3, 3))
        old = self.diag
        self.diag = Diagnostics.empty(self._cap)
        for k, v in old.__dict__.items():
            getattr(self.diag, k)[: v.shape[0]] = v

    # -- per frame --------------------------------------------------------

    def _propagate(self, imu: ImuSample, dt: float) -> None:
        a_raw = np.asarray(imu.a_raw, dtype=float)
        w_raw = np.asarray(imu.omega_raw, dtype=float)
        if self.fast:
            if not (np.isfinite(a_raw).all() and np.isfinite(w_raw).all()):
                raise RejectedSample(f"non-finite IMU sample at t={imu.t!r}")
            propagate_inplace(self.p, self.v, self.R, self.b_a, self.b_g, self.P,
                              a_raw, w_raw, dt, self._qc, self._g)
        else:
            s, self.P = propagate(self.state, self.P, imu, dt, self.cfg.noise)
            self._set_state(s)

    def _legs_kinematics(self, frame: Frame, omega):
        """Foot positions, relative and world foot velocities, validity per leg."""
        Q, QD = self._Q, self._QD
        for j, m in enumerate(frame.legs):
            Q[j] = m.q
            QD[j] = m.q_dot
        if self.fast:
            return legs_kinematics(self._hips, self._lengths, self._signs, Q, QD, omega,
                                   self.v, self.R, MAX_JOINT_SPEED)
        PF = np.full((4, 3), np.nan)
        VR = np.full((4, 3), np.nan)
        HW = np.full((4, 3), np.nan)
        ok = np.zeros(4, dtype=bool)
        for j, (leg, m) in enumerate(zip(LEG_ORDER, frame.legs)):
            ok[j] = _leg_ok(m)
            if ok[j]:
                p_foot, J = foot_position_and_jacobian(self.legs[leg], m.q)
                PF[j] = p_foot
                VR[j] = np.cross(omega, p_foot) + J @ m.q_dot
                HW[j] = self.v + self.R @ VR[j]
        return PF, VR, HW, ok

    def _updates(self, PF, VR, var, attempt):
        if self.fast:
            return zupt_legs(self.p, self.v, self.R, self.b_a, self.b_g, self.P, PF, VR, var,
                             attempt, self.gate.gamma_95, MAX_CONDITION)
        codes = np.zeros(4, dtype=np.int8)
        d2 = np.full(4, np.nan)
        for j in range(4):
            if attempt[j]:
                s, self.P, res = zupt_update(self.state, self.P, VR[j], PF[j],
                                             var[j] * np.eye(3), self.gate)
                self._set_state(s)
                codes[j] = OUTCOME_CODES[res.outcome]
                d2[j] = res.mahalanobis
        return codes, d2

    def process(self, frame: Frame) -> None:
        """Propagate to the frame's IMU time, assess contacts, apply stance updates."""
        if not self._initialized:
            raise RuntimeError("Estimator.initialize must be called first")
        fc = self.cfg.filter
        imu: ImuSample = frame.imu
        if self.steps > 0:
            dt = imu.t - self.t
            if dt > fc.gap_warn:
                log.warning("t=%.6f: %.3f s gap in IMU stream", imu.t, dt)
            if not dt > 0.0:
                raise RejectedSample(f"non-increasing IMU time {imu.t!r} after {self.t!r}")
            self._propagate(imu, min(max(dt, fc.dt_min), fc.dt_max))
        self.t = float(imu.t)

        i = self.steps
        if i >= self._cap:
            self._grow()
        d = self.diag
        omega = np.asarray(imu.omega_raw, dtype=float) - self.b_g
        PF, VR, HW, ok = self._legs_kinematics(frame, omega)

        var = self._var
        attempt = self._attempt
        mode = self.detector
        strict = self.cfg.strict
        for j, leg in enumerate(LEG_ORDER):
            fsm_phase, q_fsm = self.fsm[leg].update(frame.legs[j].force)
            fsm_stance = fsm_phase is Phase.STANCE
            d.fsm_stance[i, j] = fsm_stance
            d.q_fsm[i, j] = q_fsm
            attempt[j] = False
            if not ok[j]:
                d.outcome[i, j] = INVALID_CODE
                continue
            T, glrt_phase, q_glrt = self.glrt[leg].update(HW[j])
            if mode is Detector.FSM:
                q_glrt = 1.0
                gate = fsm_stance
            elif mode is Detector.GLRT:
                q_fsm = 1.0
                gate = glrt_phase is Phase.STANCE
            else:
                gate = fsm_stance
            q_final, sigma = adaptive_sigma(q_fsm, q_glrt, self.fusion)
            d.q_glrt[i, j] = q_glrt
            d.q_final[i, j] = q_final
            d.sigma[i, j] = sigma
            d.t_glrt[i, j] = T
            d.gate[i, j] = gate
            d.outcome[i, j] = 0
            if not gate:
                continue
            if strict and q_glrt == 0.0:
                d.outcome[i, j] = OUTCOME_CODES[UpdateOutcome.SKIPPED]
                continue
            attempt[j] = True
            var[j] = sigma * sigma

        if attempt.any():
            codes, d2 = self._updates(PF, VR, var, attempt)
            for j in range(4):
                if attempt[j]:
                    d.outcome[i, j] = codes[j]
                    d.mahalanobis[i, j] = d2[j]

        if fc.reorthonormalize_every and (i + 1) % fc.reorthonormalize_every == 0:
            self.R = orthonormalize(self.R)
        if not math.isfinite(float(self.P.sum() + self.p.sum() + self.v.sum())):
            raise NumericalFailure(f"non-finite filter state at t={imu.t!r}")

        d.t[i] = imu.t
        self._t[i] = imu.t
        self._p[i] = self.p
        self._R[i] = self.R
        self.steps += 1

    # -- results ----------------------------------------------------------

    def trajectory(self) -> Trajectory:
        n = self.steps
        return Trajectory(self._t[:n].copy(), self._p[:n].copy(), self._R[:n].copy())

    def diagnostics(self) -> Diagnostics:
        return self.diag.truncated(self.steps)


def _leg_ok(m: LegMeasurement) -> bool:
    """Finite joint data and joint speeds below the sanity bound."""
    q, qd = m.q, m.q_dot
    total = float(q[0] + q[1] + q[2] + qd[0] + qd[1] + qd[2])
    speed = max(abs(float(qd[0])), abs(float(qd[1])), abs(float(qd[2])))
    return math.isfinite(total) and speed < MAX_JOINT_SPEED


@dataclass
class RunResult:
    trajectory: Trajectory
    diagnostics: Diagnostics
    state: NominalState
    P: np.ndarray
    frames: int
    dropped: int = 0


def run_frames(frames, cfg: Config, detector="fused", sigma_base=None, dropped_counter=None,
               **kwargs) -> RunResult:
    """Run the estimator over an iterable of frames.

    The first ``cfg.filter.align_time`` seconds of accelerometer data are
    buffered to align gravity before any frame is processed.
    """
    est = Estimator(cfg, detector, sigma_base, **kwargs)
    it = iter(frames)
    buf: list[Frame] = []
    for fr in it:
        buf.append(fr)
        if fr.t - buf[0].t >= cfg.filter.align_time:
            break
    if not buf:
        raise ValueError("no frames to process")
    est.initialize(buf[0].t, [f.imu.a_raw for f in buf])
    for fr in buf:
        est.process(fr)
    for fr in it:
        est.process(fr)
    dropped = getattr(dropped_counter, "dropped", 0)
    return RunResult(est.trajectory(), est.diagnostics(), est.state, est.P.copy(), est.steps, dropped)


def frames_from_sim(sim):
    """Frames straight from a ``SimOutput`` (no file round trip)."""
    legs = [sim.leg_stream(leg) for leg in LEG_ORDER]
    for k, imu in enumerate(sim.imu_stream):
        yield Frame(imu.t, imu, tuple(l[k] for l in legs))


def run_dataset(dataset_dir, cfg: Config, out_dir, detector="fused", sigma_base=None) -> RunResult:
    """Stream a dataset directory through the estimator and write its outputs.

    Writes ``est_traj.txt`` (trajectory format) and ``diagnostics.csv``.
    """
    stream = read_stream(dataset_dir)
    res = run_frames(stream, cfg, detector, sigma_base, dropped_counter=stream)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sb = cfg.fusion.sigma_base if sigma_base is None else sigma_base
    write_trajectory(res.trajectory, out / "est_traj.txt",
                     header=f"detector={Detector(detector).value} sigma_base={sb!r}")
    res.diagnostics.write_csv(out / "diagnostics.csv")
    d = res.diagnostics
    log.info(
        "processed %d frames (%d dropped); updates accepted %s rejected %s skipped %s",
        res.frames, res.dropped, d.count(1).tolist(), d.count(2).tolist(), d.count(3).tolist(),
    )
    return res
