"""Force-based contact detection.

A two-component Gaussian mixture is fitted to a sliding window of foot force
magnitudes.  The swing (low) and stance (high) components give the
touchdown/liftoff thresholds of a debounced hysteresis state machine, and a
continuous quality score that grows linearly from ``F_on`` to ``F_max``.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import Executor, Future
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)


class Phase(str, enum.Enum):
    SWING = "SWING"
    STANCE = "STANCE"


@dataclass(frozen=True)
class GmmParams:
    w_s: float
    mu_s: float
    sigma_s: float
    w_t: float
    mu_t: float
    sigma_t: float
    degenerate: bool = False
    n_iter: int = 0
    log_likelihood: tuple[float, ...] = ()


@dataclass(frozen=True)
class ForceThresholds:
    F_on: float
    F_off: float
    F_max: float

    @property
    def valid(self) -> bool:
        return self.F_off < self.F_on <= self.F_max


class DegenerateFit(ValueError):
    pass


@dataclass(frozen=True)
class FsmConfig:
    window: int = 10_000
    refit_interval: int = 2_500
    d_min: int = 3
    fallback: ForceThresholds = ForceThresholds(F_on=20.0, F_off=10.0, F_max=80.0)
    min_samples: int = 100
    em_tol: float = 1e-6
    em_max_iter: int = 200

    def __post_init__(self):
        if self.window < self.min_samples or self.refit_interval < 1 or self.d_min < 1:
            raise ValueError("invalid FSM window/refit/debounce configuration")
        if not self.fallback.valid:
            raise ValueError(f"fallback thresholds violate F_off < F_on <= F_max: {self.fallback}")


def _log_normal(x, mu, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mu) ** 2 / var)


def fit_gmm_1d(samples, k: int = 2, tol: float = 1e-6, max_iter: int = 200) -> GmmParams:
    """EM fit of a two-component 1-D Gaussian mixture.

    Means start at the 10th/90th percentiles with equal weights and the
    sample standard deviation.  Iterates until the log-likelihood changes by
    less than ``tol`` or ``max_iter`` is reached.  Variances are floored at
    ``(0.01 * range)**2``; a fit that hits the floor on the initial spread is
    flagged degenerate.  Components are returned sorted by mean.
    """
    if k != 2:
        raise ValueError("only two-component mixtures are supported")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise ValueError(f"need at least 100 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")

    span = float(x.max() - x.min())
    var_floor = max((0.01 * span) ** 2, np.finfo(float).tiny)
    mu = np.percentile(x, [10.0, 90.0])
    var0 = float(x.var())
    degenerate = var0 <= var_floor
    var = np.full(2, max(var0, var_floor))
    w = np.array([0.5, 0.5])

    history = []
    prev = -np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        logp = np.log(w)[None, :] + _log_normal(x[:, None], mu[None, :], var[None, :])
        m = logp.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logp - m).sum(axis=1))
        ll = float(lse.sum())
        history.append(ll)
        resp = np.exp(logp - lse[:, None])

        nk = resp.sum(axis=0)
        if np.any(nk <= 0.0):
            degenerate = True
            break
        w = nk / x.size
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
        if np.any(var < var_floor):
            var = np.maximum(var, var_floor)
        if abs(ll - prev) < tol:
            break
        prev = ll

    order = np.argsort(mu, kind="stable")
    w, mu, sd = w[order], mu[order], np.sqrt(var[order])
    return GmmParams(
        w_s=float(w[0]), mu_s=float(mu[0]), sigma_s=float(sd[0]),
        w_t=float(w[1]), mu_t=float(mu[1]), sigma_t=float(sd[1]),
        degenerate=bool(degenerate), n_iter=n_iter, log_likelihood=tuple(history),
    )


def derive_thresholds(gmm: GmmParams) -> ForceThresholds:
    """Touchdown/liftoff thresholds from the mixture.

    ``F_max = mu_t``, ``F_off = mu_s + 3 sigma_s``,
    ``F_on = F_off + 0.1 (F_max - F_off)``.  Raises ``DegenerateFit`` when
    ``F_off >= F_max``.
    """
    F_max = gmm.mu_t
    F_off = gmm.mu_s + 3.0 * gmm.sigma_s
    if F_off >= F_max:
        raise DegenerateFit(f"F_off={F_off:.3f} >= F_max={F_max:.3f}")
    F_on = F_off + 0.1 * (F_max - F_off)
    return ForceThresholds(F_on=F_on, F_off=F_off, F_max=F_max)


def is_bimodal(gmm: GmmParams) -> bool:
    if gmm.degenerate:
        return False
    separated = (gmm.mu_t - gmm.mu_s) > 2.0 * (gmm.sigma_s + gmm.sigma_t)
    return bool(separated and min(gmm.w_s, gmm.w_t) > 0.05)


@dataclass(frozen=True)
class FsmState:
    phase: Phase = Phase.SWING
    dwell_count: int = 0
    thresholds: ForceThresholds = FsmConfig.fallback
    fallback_active: bool = True


def fsm_step(state: FsmState, F_mag: float, d_min: int = 3) -> FsmState:
    """Advance the debounced hysteresis machine by one force sample.

    SWING -> STANCE after ``d_min`` consecutive samples with ``F >= F_on``;
    STANCE -> SWING after ``d_min`` consecutive samples with ``F <= F_off``.
    """
    th = state.thresholds
    if state.phase is Phase.SWING:
        pushing = F_mag >= th.F_on
    else:
        pushing = F_mag <= th.F_off
    if not pushing:
        return replace(state, dwell_count=0) if state.dwell_count else state
    dwell = state.dwell_count + 1
    if dwell >= d_min:
        other = Phase.STANCE if state.phase is Phase.SWING else Phase.SWING
        return replace(state, phase=other, dwell_count=0)
    return replace(state, dwell_count=dwell)


def quality_fsm(F_mag: float, th: ForceThresholds) -> float:
    """``clamp((F - F_on) / (F_max - F_on), 0, 1)``."""
    span = th.F_max - th.F_on
    if span <= 0.0:
        return 1.0 if F_mag >= th.F_max else 0.0
    return min(1.0, max(0.0, (F_mag - th.F_on) / span))


def thresholds_from_window(samples, cfg: FsmConfig):
    """Refit on a window snapshot; returns ``(thresholds, fallback_active, gmm)``."""
    gmm = fit_gmm_1d(samples, tol=cfg.em_tol, max_iter=cfg.em_max_iter)
    if is_bimodal(gmm):
        try:
            return derive_thresholds(gmm), False, gmm
        except DegenerateFit:
            pass
    return cfg.fallback, True, gmm


@dataclass
class ForceWindow:
    capacity: int
    data: np.ndarray = field(init=False)
    size: int = field(init=False, default=0)
    head: int = field(init=False, default=0)
    refit_counter: int = field(init=False, default=0)
    clamped: int = field(init=False, default=0)

    def __post_init__(self):
        self.data = np.zeros(self.capacity)

    def push(self, value: float) -> float:
        if value < 0.0:
            value = 0.0
            self.clamped += 1
        self.data[self.head] = value
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.refit_counter += 1
        return value

    def snapshot(self) -> np.ndarray:
        if self.size < self.capacity:
            return self.data[: self.size].copy()
        return np.roll(self.data, -self.head)


class ForceContactDetector:
    """Per-leg force detector: window, periodic mixture refit, FSM, quality score.

    With an ``executor`` the refit runs on a snapshot in the background and its
    thresholds are swapped in exactly ``refit_latency`` samples later, so the
    output stays deterministic.  Without one the refit is synchronous.
    """

    def __init__(self, cfg: FsmConfig = FsmConfig(), executor: Executor | None = None,
                 refit_latency: int = 0):
        self.cfg = cfg
        self.window = ForceWindow(cfg.window)
        self.state = FsmState(thresholds=cfg.fallback, fallback_active=True)
        self.executor = executor
        self.refit_latency = refit_latency if executor is not None else 0
        self._pending: Future | None = None
        self._pending_countdown = 0
        self.refits = 0
        self.last_gmm: GmmParams | None = None

    def _swap(self, result):
        thresholds, fallback, gmm = result
        self.last_gmm = gmm
        self.refits += 1
        if fallback and not self.state.fallback_active:
            log.info("force distribution not bimodal; using initial thresholds")
        self.state = replace(self.state, thresholds=thresholds, fallback_active=fallback)

    def _maybe_refit(self):
        if self._pending is not None:
            self._pending_countdown -= 1
            if self._pending_countdown <= 0:
                self._swap(self._pending.result())
                self._pending = None
        w = self.window
        if w.refit_counter >= self.cfg.refit_interval and w.size >= self.cfg.min_samples:
            w.refit_counter = 0
            snap = w.snapshot()
            if self.executor is None:
                self._swap(thresholds_from_window(snap, self.cfg))
            elif self._pending is None:
                self._pending = self.executor.submit(thresholds_from_window, snap, self.cfg)
                self._pending_countdown = self.refit_latency

    def update(self, F_mag: float) -> tuple[Phase, float]:
        """Consume one force sample; returns ``(phase, q_fsm)``."""
        F = self.window.push(float(F_mag))
        self.state = fsm_step(self.state, F, self.cfg.d_min)
        q = quality_fsm(F, self.state.thresholds)
        self._maybe_refit()
        return self.state.phase, q

    @property
    def thresholds(self) -> ForceThresholds:
        return self.state.thresholds

