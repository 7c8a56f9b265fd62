"""Kinematic stationarity test on windowed world-frame foot velocity.

Under the stance hypothesis each velocity sample is N(0, sigma_v^2 I).  The
per-sample-normalized GLR statistic is ``T = |mean|^2 / sigma_v^2``; ``N_w * T``
is chi-square with 3 dof, so the stance threshold is ``7.815 / N_w``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from .contact_fsm import Phase

CHI2_3DOF_95 = 7.815
WARMUP = math.inf


@dataclass(frozen=True)
class GlrtConfig:
    sigma_v: float = 0.45
    window: int = 4
    gamma_on: float | None = None  # defaults to CHI2_3DOF_95 / window

    def __post_init__(self):
        if self.sigma_v <= 0.0 or self.window < 1:
            raise ValueError("sigma_v must be positive and the window at least 1")
        if self.gamma_on is None:
            object.__setattr__(self, "gamma_on", CHI2_3DOF_95 / self.window)
        if self.gamma_on <= 0.0:
            raise ValueError("gamma_on must be positive")


class VelocityWindow:
    def __init__(self, capacity: int = 4):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = capacity
        self._buf: deque = deque(maxlen=capacity)

    def push(self, v) -> None:
        x, y, z = float(v[0]), float(v[1]), float(v[2])
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
            raise ValueError("velocity sample must be finite")
        self._buf.append((x, y, z))

    def clear(self) -> None:
        self._buf.clear()

    @property
    def full(self) -> bool:
        return len(self._buf) == self.capacity

    def __len__(self):
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)


def glrt_statistic(window, cfg: GlrtConfig = GlrtConfig()) -> float:
    """``|mean(window)|^2 / sigma_v^2``, or ``inf`` while the window is filling."""
    n = len(window)
    if n < cfg.window:
        return WARMUP
    mx = my = mz = 0.0
    for x, y, z in window:
        mx += x
        my += y
        mz += z
    mx /= n
    my /= n
    mz /= n
    return (mx * mx + my * my + mz * mz) / (cfg.sigma_v * cfg.sigma_v)


def classify(T: float, cfg: GlrtConfig = GlrtConfig()) -> Phase:
    return Phase.STANCE if T < cfg.gamma_on else Phase.SWING


def quality_glrt(T: float, cfg: GlrtConfig = GlrtConfig()) -> float:
    """``clamp(1 - T / gamma_on, 0, 1)``; 1 for a perfectly still foot."""
    if math.isinf(T):
        return 0.0
    return min(1.0, max(0.0, 1.0 - T / cfg.gamma_on))


class GlrtDetector:
    """Per-leg detector: push one velocity, read back ``(T, phase, q)``."""

    def __init__(self, cfg: GlrtConfig = GlrtConfig()):
        self.cfg = cfg
        self.window = VelocityWindow(cfg.window)

    def update(self, v_foot_world) -> tuple[float, Phase, float]:
        self.window.push(v_foot_world)
        T = glrt_statistic(self.window, self.cfg)
        return T, classify(T, self.cfg), quality_glrt(T, self.cfg)
