"""Episode reward terms and their combination.

Four shaped terms grade a simulated episode: closest approach of the net to
the ball, net/ball alignment when the ball first gets close, stability of
the ball once close, and a penalty for exceeding joint limits. A sparse
binary catch term and a binary fault penalty replace the shaped terms when
scoring in the hardware-analog mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .config import RewardConfig

SIM = "sim"
REAL_ANALOG = "real_analog"


class NeverClose(ValueError):
    """The ball never came within the closeness cutoff of the net."""


def position_reward(min_distance: float, cfg: RewardConfig) -> float:
    """1.0 inside the closeness cutoff, exponential falloff beyond it."""
    if min_distance < 0:
        raise ValueError("distance must be nonnegative")
    if min_distance <= cfg.close_cutoff:
        return 1.0
    return float(np.exp(-cfg.position_decay_rate * (min_distance - cfg.close_cutoff)))


def orientation_reward(ball_dir: np.ndarray, net_axis: np.ndarray) -> float:
    """Affine map of the direction/axis dot product onto [0, 1].

    Both inputs must be unit vectors; evaluated by the caller at the moment
    the ball first comes within the closeness cutoff.
    """
    ball_dir = np.asarray(ball_dir, dtype=float)
    net_axis = np.asarray(net_axis, dtype=float)
    for v in (ball_dir, net_axis):
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("orientation_reward expects unit vectors")
    return float((1.0 + ball_dir @ net_axis) / 2.0)


def stability_reward(speeds: Sequence[float], close: Sequence[bool], dt: float,
                     cfg: RewardConfig) -> float:
    """Stability of the ball once it is close to the net.

    A flat part pays for entering closeness and staying close through the
    end of the episode; the scaled part averages per-step speed scores over
    the first ``stability_window`` seconds after first closeness. The window
    does not restart if the ball leaves.
    """
    speeds = np.asarray(speeds, dtype=float)
    close = np.asarray(close, dtype=bool)
    if not close.any():
        return 0.0
    first = int(np.argmax(close))
    flat = cfg.stability_flat if close[first:].all() else 0.0

    window = max(1, int(round(cfg.stability_window / dt)))
    idx = np.arange(first, min(first + window, len(speeds)))
    scores = np.zeros(window)
    in_window = close[idx]
    s = speeds[idx]
    per_step = np.where(s <= cfg.stability_speed_cap, 1.0,
                        np.exp(-cfg.stability_decay_rate * (s - cfg.stability_speed_cap)))
    scores[:idx.size] = np.where(in_window, per_step, 0.0)
    return float(flat + cfg.stability_scaled * scores.mean())


def catch_reward(caught: bool) -> float:
    return 1.0 if caught else 0.0


def constraint_penalty(relative_violations: Sequence[float], dt: float,
                       cfg: RewardConfig) -> float:
    """1.0 when the trajectory stays inside the limit boxes, decaying with
    integrated relative violation against a fixed budget."""
    total = float(np.sum(relative_violations) * dt)
    return 1.0 - min(1.0, total / cfg.violation_budget)


@dataclass
class RewardTerms:
    position: float = 0.0
    orientation: float = 0.0
    stability: float = 0.0
    catch: float = 0.0
    constraint: float = 0.0
    fault_free: float = 0.0

    def as_dict(self) -> Dict[str, float]:
        return {
            "position": self.position, "orientation": self.orientation,
            "stability": self.stability, "catch": self.catch,
            "constraint": self.constraint, "fault_free": self.fault_free,
        }


def total_reward(terms: RewardTerms, mode: str, cfg: RewardConfig) -> float:
    """Weighted sum of the terms active in the given scoring mode."""
    w = cfg.term_weights
    if mode == SIM:
        return (w["position"] * terms.position + w["orientation"] * terms.orientation
                + w["stability"] * terms.stability + w["constraint"] * terms.constraint)
    if mode == REAL_ANALOG:
        return (w["position"] * terms.position + w["catch"] * terms.catch
                + w["fault"] * terms.fault_free)
    raise ValueError(f"unknown reward mode {mode!r}")
