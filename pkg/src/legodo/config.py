"""YAML configuration for the estimator, metrics and simulator.

Every section is optional; missing keys take the library defaults.  Unknown
keys are rejected so typos do not silently fall back to defaults.

.. code-block:: yaml

    robot:
      preset: go2            # default leg set; per-leg overrides below
      foot_radius: 0.0
      legs:
        FL: {hip_offset: [0.1934, 0.0465, 0.0], link_lengths: [0.0955, 0.213, 0.213]}
    noise:   {sigma_a: 0.02, sigma_g: 0.002, sigma_ba: 0.001, sigma_bg: 0.0001}
    contact:
      fsm:    {window: 10000, refit_interval: 2500, d_min: 3, fallback: [20, 10, 80]}
      glrt:   {sigma_v: 0.45, window: 4}
      fusion: {sigma_base: 1.0, epsilon: 1.0e-6}
      strict: false
    filter:
      # initial error standard deviations
      sigma_p: 0.1
      sigma_v: 0.1
      sigma_theta: 0.01
      sigma_ba: 0.05
      sigma_bg: 0.01
      gamma_95: 7.815
      align_time: 0.5
      reorthonormalize_every: 1000
    metrics: {max_dt: 0.05, delta_m: 10.0, align: none}
    sim:
      gait: TROT
      body_speed: [0.5, 0.0, 0.0]
      noise: {sigma_a: 0.02, force_sigma: 2.0}
      random_slips: {count: 20, speed: 1.0, seed: 0}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .contact_fsm import ForceThresholds, FsmConfig
from .contact_glrt import GlrtConfig
from .eskf import GateConfig, NoiseParams
from .fusion import FusionConfig
from .gait_sim import GaitConfig, SensorNoise, SimConfigError, SlipEvent, slip_schedule
from .kinematics import LEG_ORDER, LegId, LegModel, default_legs


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    sigma_p: float = 0.1
    sigma_v: float = 0.1
    sigma_theta: float = 0.01
    sigma_ba: float = 0.05
    sigma_bg: float = 0.01
    gamma_95: float = 7.815
    align_time: float = 0.5  # s of accelerometer data used for roll/pitch
    reorthonormalize_every: int = 1000
    dt_min: float = 1e-4
    dt_max: float = 0.01
    gap_warn: float = 0.1


@dataclass(frozen=True)
class MetricsConfig:
    max_dt: float = 0.05
    delta_m: float = 10.0
    align: str = "none"
    frechet_max_points: int = 5000


@dataclass
class Config:
    legs: list = field(default_factory=default_legs)
    noise: NoiseParams = NoiseParams()
    fsm: FsmConfig = FsmConfig()
    glrt: GlrtConfig = GlrtConfig()
    fusion: FusionConfig = FusionConfig()
    strict: bool = False
    filter: FilterConfig = FilterConfig()
    metrics: MetricsConfig = MetricsConfig()
    sim: GaitConfig = GaitConfig()

    @property
    def gate(self) -> GateConfig:
        return GateConfig(self.filter.gamma_95)


def _take(section: dict, cls, name: str, **extra):
    """Build dataclass ``cls`` from ``section``, rejecting unknown keys."""
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a mapping")
    section = dict(section)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"[{name}] unknown keys {sorted(unknown)}")
    section.update(extra)
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def _legs(section: dict) -> list[LegModel]:
    section = dict(section or {})
    preset = section.pop("preset", "go2")
    foot_radius = float(section.pop("foot_radius", 0.0))
    overrides = section.pop("legs", {}) or {}
    if section:
        raise ConfigError(f"[robot] unknown keys {sorted(section)}")
    if preset != "go2":
        raise ConfigError(f"[robot] unknown preset {preset!r}")
    base = {m.leg_id: m for m in default_legs()}
    out = []
    for leg in LEG_ORDER:
        m = dataclasses.asdict(base[leg])
        m["foot_radius"] = foot_radius
        ov = overrides.get(leg.value, {}) or {}
        unknown = set(ov) - {"hip_offset", "link_lengths", "axis_signs", "foot_radius", "joint_limits"}
        if unknown:
            raise ConfigError(f"[robot.legs.{leg.value}] unknown keys {sorted(unknown)}")
        m.update(ov)
        m["leg_id"] = LegId(leg)
        m["hip_offset"] = np.asarray(m["hip_offset"], dtype=float)
        try:
            out.append(LegModel(**m))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[robot.legs.{leg.value}] {exc}") from None
    extra = set(overrides) - {l.value for l in LEG_ORDER}
    if extra:
        raise ConfigError(f"[robot.legs] unknown legs {sorted(extra)}")
    return out


def _contact(section: dict):
    section = dict(section or {})
    fsm = dict(section.pop("fsm", {}) or {})
    if "fallback" in fsm:
        fb = fsm["fallback"]
        try:
            fsm["fallback"] = ForceThresholds(*map(float, fb))
        except (TypeError, ValueError):
            raise ConfigError("[contact.fsm] fallback must be [F_on, F_off, F_max]") from None
    glrt = _take(section.pop("glrt", {}), GlrtConfig, "contact.glrt")
    fusion = _take(section.pop("fusion", {}), FusionConfig, "contact.fusion")
    strict = bool(section.pop("strict", False))
    if section:
        raise ConfigError(f"[contact] unknown keys {sorted(section)}")
    return _take(fsm, FsmConfig, "contact.fsm"), glrt, fusion, strict


def _sim(section: dict) -> GaitConfig:
    section = dict(section or {})
    noise = _take(section.pop("noise", {}), SensorNoise, "sim.noise")
    slips = section.pop("random_slips", None)
    events = section.pop("slip_events", ())
    try:
        events = tuple(SlipEvent(**e) for e in events)
        cfg = _take(section, GaitConfig, "sim", noise=noise, slip_events=events)
        if slips:
            slips = dict(slips)
            count = int(slips.pop("count"))
            events = events + slip_schedule(cfg, count, **slips)
            cfg = dataclasses.replace(cfg, slip_events=events)
    except (SimConfigError, TypeError, KeyError) as exc:
        raise ConfigError(f"[sim] {exc}") from None
    return cfg


def load_config(source=None) -> Config:
    """Parse a YAML file, an already-parsed dict, or ``None`` for defaults."""
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc.strerror}") from None
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw = dict(raw)
    known = {"robot", "noise", "contact", "filter", "metrics", "sim"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    fsm, glrt, fusion, strict = _contact(raw.get("contact"))
    return Config(
        legs=_legs(raw.get("robot")),
        noise=_take(raw.get("noise"), NoiseParams, "noise"),
        fsm=fsm,
        glrt=glrt,
        fusion=fusion,
        strict=strict,
        filter=_take(raw.get("filter"), FilterConfig, "filter"),
        metrics=_take(raw.get("metrics"), MetricsConfig, "metrics"),
        sim=_sim(raw.get("sim")),
    )
