"""Default configuration and config-file loading.

Every tunable in the package lives here as a dataclass default, grouped the
same way the config file is: ``limits``, ``thrower``, ``env``, ``ocp``,
``solver``, ``cradle``, ``rewards``, ``policy``, ``bgs``. A config file is a
YAML mapping with those sections; values present in the file override the
defaults, and CLI flags override the file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Any, Dict, Optional, Tuple

import numpy as np
import yaml

from . import kinematics
from .kinematics import KinematicModel
from .sqp_solver import SqpSettings
from .stage_ocp import Limits, default_limits


class ConfigError(ValueError):
    """Malformed or unknown config content."""


# Ready joint configuration at episode start: the net parked upstream of the
# nominal catch point, mouth tilted toward the thrower. Solved once from the
# default chain for net position (0, -0.50, 1.15) and normal (0, -0.78, 0.63).
READY_Q = np.array([0.0, 0.0, 1.5667, -0.1586, 0.0, 1.0538, 0.0])


def default_loft_angle(horizontal_speed: float = 4.5, distance: float = 3.9,
                       catch_speed: float = 5.5, g: float = 9.81) -> float:
    """Launch elevation (degrees) making the ball's speed equal
    ``catch_speed`` when it crosses the robot's base plane."""
    t_c = distance / horizontal_speed
    vz_catch = -np.sqrt(catch_speed ** 2 - horizontal_speed ** 2)
    vz0 = g * t_c + vz_catch
    return float(np.degrees(np.arctan2(vz0, horizontal_speed)))


@dataclass(frozen=True)
class ThrowerConfig:
    """Mechanical thrower: geometry and launch distribution."""

    distance: float = 3.9              # horizontal distance to the robot base, m
    speed_mean: float = 4.5            # horizontal launch speed, m/s
    speed_jitter: float = 0.08         # uniform +/- jitter on speed, m/s
    yaw_range: Tuple[float, float] = (-6.0, 6.3)   # degrees, left/right half-ranges
    right_bias: float = 0.6            # fraction of throws aimed right (yaw > 0)
    release_height: float = 0.05       # m
    loft_angle: float = field(default_factory=default_loft_angle)  # degrees

    def __post_init__(self):
        if self.distance <= 0:
            raise ConfigError("thrower distance must be positive")
        if not self.yaw_range[0] < self.yaw_range[1]:
            raise ConfigError("yaw range must satisfy lo < hi")
        if not 0.0 <= self.right_bias <= 1.0:
            raise ConfigError("right_bias must be in [0, 1]")


@dataclass(frozen=True)
class EnvConfig:
    """Simulator step rate, observation synthesis, and catch detection."""

    control_dt: float = 1.0 / 75.0
    episode_horizon: float = 1.8       # s
    obs_noise_std: float = 0.005       # m, i.i.d. Gaussian on measured ball position
    n_hist: int = 10
    n_pred: int = 20
    net_radius: float = 0.10           # m
    net_depth: float = 0.15            # m
    catch_hold_time: float = 0.25      # s of continuous in-net detection
    catch_rel_speed: float = 1.0       # m/s gate for the in-net detector
    capture_speed_limit: float = 5.8   # entry relative speed above which the ball bounces out
    capture_tau: float = 0.02          # s, mesh drag time constant during capture
    bounce_restitution: float = 0.5
    stick_speed: float = 0.25          # m/s, below this the ball rides the net frame
    detach_accel: float = 15.0         # m/s^2 of mouth-ward shake that frees a held ball
    command_delay_steps: int = 0       # extra ticks before a command reaches the robot
    gravity: float = 9.81

    def __post_init__(self):
        if self.control_dt <= 0:
            raise ConfigError("control_dt must be positive")
        if self.n_hist < 1 or self.n_pred < 1:
            raise ConfigError("observation row counts must be >= 1")


@dataclass(frozen=True)
class OcpConfig:
    """Catching-problem parameters handed to the trajectory optimizer."""

    eps_p: float = 0.05
    eps_r: float = 0.35
    v_c: float = 1.0
    w_p: float = 10.0
    w_v: float = 1.0
    lam: float = 10.0
    n_stages: int = 1


@dataclass(frozen=True)
class CradleConfig:
    slow_down_time: float = 0.3   # s
    k_v: float = 20.0             # 1/s
    k_omega: float = 20.0         # 1/s
    duration_factor: float = 2.0  # cradle runs for duration_factor * slow_down_time


@dataclass(frozen=True)
class RewardConfig:
    close_cutoff: float = 0.20          # m
    position_decay_rate: float = 5.0    # 1/m
    stability_window: float = 0.25      # s
    stability_speed_cap: float = 0.2    # m/s
    stability_decay_rate: float = 20.0  # s/m
    stability_flat: float = 0.2
    stability_scaled: float = 0.8
    violation_budget: float = 0.05
    term_weights: Dict[str, float] = field(default_factory=lambda: {
        "position": 1.0, "orientation": 1.0, "stability": 1.0,
        "catch": 1.0, "constraint": 1.0, "fault": 1.0,
    })

    def __post_init__(self):
        if abs(self.stability_flat + self.stability_scaled - 1.0) > 1e-12:
            raise ConfigError("stability flat + scaled parts must sum to 1.0")


@dataclass(frozen=True)
class PolicyConfig:
    """Two-tower network shapes. Defaults land at exactly 3255 parameters
    with the default observation sizes (n_hist=10, n_pred=20)."""

    hist_channels: int = 8
    hist_kernel: int = 4
    hist_stride: int = 2
    pred_channels: int = 8
    pred_kernel: int = 4
    pred_stride: int = 3
    hidden: int = 32
    init_scale: float = 0.5


@dataclass(frozen=True)
class BgsConfig:
    sigma: float = 0.05
    perturbations: int = 50            # antithetic pairs per iteration
    rollouts_per_perturbation: int = 2
    step_size: float = 0.02
    iterations: int = 400
    antithetic: bool = True
    top_fraction: float = 0.5
    seed: int = 0
    eval_episodes: int = 20
    checkpoint_every: int = 50
    workers: int = 1

    def __post_init__(self):
        if self.sigma <= 0 or self.step_size <= 0 or self.perturbations < 1:
            raise ConfigError("BGS parameters out of range")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ConfigError("top_fraction must be in (0, 1]")


@dataclass(frozen=True)
class AgentConfig:
    replan_every: int = 3              # ticks between synchronous re-solves
    cold_start_iterations: int = 30    # solver budget for the first solve
    warm_iterations: int = 12          # solver budget for replans


@dataclass(frozen=True)
class Config:
    thrower: ThrowerConfig = field(default_factory=ThrowerConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    solver: SqpSettings = field(default_factory=lambda: SqpSettings(
        max_iterations=40, optimality_tolerance=1e-5))
    cradle: CradleConfig = field(default_factory=CradleConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    bgs: BgsConfig = field(default_factory=BgsConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    limits: Limits = field(default_factory=default_limits)
    ready_q: np.ndarray = field(default_factory=lambda: READY_Q.copy())

    def model(self) -> KinematicModel:
        return kinematics.default_model()


def _merge_section(cls, defaults, overrides: Dict[str, Any]):
    valid = {f.name for f in fields(cls)}
    unknown = set(overrides) - valid
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    merged = {f.name: getattr(defaults, f.name) for f in fields(cls)}
    merged.update(overrides)
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__} values: {exc}") from exc


_SECTIONS = {
    "thrower": ThrowerConfig,
    "env": EnvConfig,
    "ocp": OcpConfig,
    "solver": SqpSettings,
    "cradle": CradleConfig,
    "rewards": RewardConfig,
    "policy": PolicyConfig,
    "bgs": BgsConfig,
    "agent": AgentConfig,
    "limits": Limits,
}


def load_config(path: Optional[str] = None,
                overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Config:
    """Config from defaults, optionally merged with a YAML file and a nested
    override mapping (section -> key -> value), in that order."""
    raw: Dict[str, Any] = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        raw = loaded
    if overrides:
        for section, vals in overrides.items():
            raw.setdefault(section, {})
            raw[section] = {**raw[section], **vals}

    base = Config()
    parts: Dict[str, Any] = {}
    for key, section in raw.items():
        if key == "ready_q":
            parts["ready_q"] = np.asarray(section, dtype=float).reshape(7)
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(section, dict):
            raise ConfigError(f"config section {key!r} must be a mapping")
        if "yaw_range" in section:
            section = {**section, "yaw_range": tuple(section["yaw_range"])}
        parts[key] = _merge_section(_SECTIONS[key], getattr(base, key), section)
    return dataclasses.replace(base, **parts)


def dump_defaults() -> str:
    """The full default configuration as a YAML document."""
    cfg = Config()
    doc: Dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        block = {}
        for f in fields(cls):
            v = getattr(getattr(cfg, name), f.name)
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, tuple):
                v = list(v)
            block[f.name] = v
        doc[name] = block
    doc["ready_q"] = cfg.ready_q.tolist()
    return yaml.safe_dump(doc, sort_keys=False)
