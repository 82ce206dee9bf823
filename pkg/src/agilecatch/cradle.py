"""Open-loop post-intercept cradling.

After the catch instant the controller stops tracking the ball and runs a
fixed scooping primitive: the desired head velocity decays from the catching
speed to zero along the net normal while a constant-rate angular command
rotates the net to face upward. Desired twists are converted to joint
accelerations by proportional feedback, one Euler step, and a damped
Jacobian inverse, then clipped to the acceleration box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .kinematics import KinematicModel, fk_with_jacobian
from .stage_ocp import Limits

E3 = np.array([0.0, 0.0, 1.0])
DLS_DAMPING = 1e-3  # damped-least-squares factor for the twist inversion


@dataclass(frozen=True)
class CradleParams:
    t_s: float = 0.3            # slow-down time, s
    k_v: float = 20.0           # translational feedback gain, 1/s
    k_omega: float = 20.0       # rotational feedback gain, 1/s
    v_c: float = 1.0            # catching speed the scoop decays from, m/s
    control_dt: float = 1.0 / 75.0

    def __post_init__(self):
        if min(self.t_s, self.k_v, self.k_omega, self.control_dt) <= 0:
            raise ValueError("cradle parameters must be positive")


def desired_twist(q: np.ndarray, t: float, t_f: float, params: CradleParams,
                  model: KinematicModel) -> Tuple[np.ndarray, np.ndarray]:
    """Desired head (v_d, w_d) at time t >= t_f.

    v_d rides the net normal and decays from v_c to zero over the slow-down
    time (reversing briefly mid-scoop); w_d turns the net normal toward
    straight up at a fixed pi rad/s scale, vanishing when already vertical.
    """
    nu = min((t - t_f) / params.t_s, 1.0)
    pose, _ = fk_with_jacobian(model, q)
    y_hat = pose.net_normal
    v_d = params.v_c * (1.0 - nu) * np.cos(np.pi * nu) * y_hat
    w_d = np.pi * np.cross(y_hat, E3)
    return v_d, w_d


def cradle_step(q: np.ndarray, qdot: np.ndarray, t: float, t_f: float,
                params: CradleParams, limits: Limits,
                model: KinematicModel, damping: float = DLS_DAMPING) -> np.ndarray:
    """Joint accelerations realizing one feedback step of the scoop.

    Integrates the proportional twist feedback for one control step from the
    current head twist, inverts the Jacobian (damped least squares; damping
    bounds the rates near wrist singularities), and clips the implied
    velocity change to the acceleration box.
    """
    pose, J = fk_with_jacobian(model, q)
    twist = J @ qdot
    v_d, w_d = desired_twist(q, t, t_f, params, model)
    dt = params.control_dt
    v_next = twist[:3] + params.k_v * (v_d - twist[:3]) * dt
    w_next = twist[3:] + params.k_omega * (w_d - twist[3:]) * dt

    target = np.concatenate([v_next, w_next])
    JJt = J @ J.T + damping * np.eye(6)
    qdot_next = J.T @ np.linalg.solve(JJt, target)

    accel = (qdot_next - qdot) / dt
    return np.clip(accel, -limits.qddot_a, limits.qddot_a)


def simulate_cradle(q0: np.ndarray, qdot0: np.ndarray, t_f: float, duration: float,
                    params: CradleParams, limits: Limits,
                    model: KinematicModel) -> List[Tuple[np.ndarray, np.ndarray, float]]:
    """Zero-order-hold rollout of the cradle from the intercept state.

    Returns the (q, qdot, t) sequence sampled at the control rate, starting
    at (q0, qdot0, t_f) inclusive.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    dt = params.control_dt
    q = np.asarray(q0, dtype=float).copy()
    qdot = np.asarray(qdot0, dtype=float).copy()
    t = float(t_f)
    out = [(q.copy(), qdot.copy(), t)]
    steps = int(round(duration / dt))
    for _ in range(steps):
        u = cradle_step(q, qdot, t, t_f, params, limits, model)
        q = q + qdot * dt + 0.5 * u * dt * dt
        qdot = qdot + u * dt
        t += dt
        out.append((q.copy(), qdot.copy(), t))
    return out
