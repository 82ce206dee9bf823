"""Ball-flight prediction and parameter estimation.

The ball model is drag-free Newtonian flight under constant gravity. Flight
state is carried as a reference (position, velocity, epoch) triple; prediction
at any query time is closed form. The estimator recovers the reference state
from timestamped position measurements by ordinary linear least squares after
subtracting the known gravity parabola.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

GRAVITY = 9.81  # m/s^2, magnitude; acceleration vector is (0, 0, -GRAVITY)


class InsufficientData(ValueError):
    """Raised when a fit is attempted with too few or degenerate samples."""


class DegenerateFit(ValueError):
    """Raised when the least-squares normal system is rank-deficient."""


class NoCrossing(ValueError):
    """Raised when the ball never reaches the queried plane at t >= t_ref."""


def gravity_vector(g: float = GRAVITY) -> np.ndarray:
    return np.array([0.0, 0.0, -g])


@dataclass(frozen=True)
class BallParams:
    """Parametric flight state: position/velocity at the reference epoch."""

    p_ref: np.ndarray  # (3,) meters
    v_ref: np.ndarray  # (3,) m/s
    t_ref: float = 0.0  # seconds
    g: float = GRAVITY

    def __post_init__(self):
        object.__setattr__(self, "p_ref", np.asarray(self.p_ref, dtype=float).reshape(3))
        object.__setattr__(self, "v_ref", np.asarray(self.v_ref, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.p_ref)) and np.all(np.isfinite(self.v_ref))
                and np.isfinite(self.t_ref)):
            raise ValueError("ball parameters must be finite")
        if self.t_ref < 0.0:
            raise ValueError("t_ref must be nonnegative")


@dataclass(frozen=True)
class BallObservation:
    """One timestamped position measurement of the ball."""

    t: float
    p_meas: np.ndarray  # (3,) meters

    def __post_init__(self):
        object.__setattr__(self, "p_meas", np.asarray(self.p_meas, dtype=float).reshape(3))


def predict(params: BallParams, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form position and velocity of the ball at time ``t``."""
    dt = float(t) - params.t_ref
    g = gravity_vector(params.g)
    position = params.p_ref + params.v_ref * dt + 0.5 * g * dt * dt
    velocity = params.v_ref + g * dt
    return position, velocity


def fit_arrays(times: np.ndarray, positions: np.ndarray,
               g: float = GRAVITY) -> BallParams:
    """Array-based core of :func:`fit`: times (n,), positions (n, 3)."""
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if times.size < 3:
        raise InsufficientData(f"need >= 3 observations, got {times.size}")
    t_ref = float(times[0])
    dts = times - t_ref
    if dts.max() <= 0.0:
        raise InsufficientData("observations span zero time")

    grav = gravity_vector(g)
    compensated = positions - 0.5 * np.outer(dts * dts, grav)

    design = np.column_stack([np.ones_like(dts), dts])  # (n, 2)
    sol, _, rank, _ = np.linalg.lstsq(design, compensated, rcond=None)
    if rank < 2:
        raise DegenerateFit("normal system is rank-deficient")
    return BallParams(p_ref=sol[0], v_ref=sol[1], t_ref=t_ref, g=g)


def fit(observations: Sequence[BallObservation], g: float = GRAVITY) -> BallParams:
    """Least-squares flight-state fit from noisy position samples.

    Gravity is known, so measured positions minus the gravity parabola are
    affine in time; the reference position/velocity at the epoch of the first
    sample fall out of a 2-parameter linear regression per axis.
    """
    if len(observations) < 3:
        raise InsufficientData(f"need >= 3 observations, got {len(observations)}")
    times = np.array([o.t for o in observations], dtype=float)
    pos = np.stack([o.p_meas for o in observations])
    return fit_arrays(times, pos, g=g)


def predict_track(params: BallParams, times: np.ndarray) -> np.ndarray:
    """Vectorized prediction: rows of (position, velocity) at each time."""
    dts = np.asarray(times, dtype=float) - params.t_ref
    grav = gravity_vector(params.g)
    out = np.empty((dts.size, 6))
    out[:, :3] = params.p_ref + np.outer(dts, params.v_ref) \
        + 0.5 * np.outer(dts * dts, grav)
    out[:, 3:] = params.v_ref + np.outer(dts, grav)
    return out


def time_at_plane(params: BallParams, plane_y: float) -> float:
    """Smallest t >= t_ref at which predicted y-position equals ``plane_y``.

    Gravity is z-only, so the y-crossing is a linear solve. Raises NoCrossing
    when the ball does not move toward the plane.
    """
    dy = plane_y - params.p_ref[1]
    if dy == 0.0:
        return params.t_ref
    vy = params.v_ref[1]
    if vy == 0.0 or (dy > 0.0) != (vy > 0.0):
        raise NoCrossing(f"y-velocity {vy} never reaches plane y={plane_y}")
    return params.t_ref + dy / vy


def time_at_plane_or_none(params: BallParams, plane_y: float) -> Optional[float]:
    """Like :func:`time_at_plane` but returns None instead of raising."""
    try:
        return time_at_plane(params, plane_y)
    except NoCrossing:
        return None
