"""Multi-stage discrete-time formulation of the free-end-time catching problem.

A stage is one constant-acceleration phase followed by a constant-velocity
cruise. Per joint i, stage k accelerates at +/- the acceleration bound for
|dqdot_i[k]| / qddot_a_i seconds to realize a net velocity change dqdot_i[k],
then cruises at qdot_i[k] + dqdot_i[k] for the remainder of the stage
duration dt[k]. The composite state is (q, qdot, t); the control is
(dqdot, dt). Catch time is the sum of stage durations.

Besides the plain operations (transition, decode, objective, constraints),
this module carries the analytic sensitivity machinery used by the solver:
state-transition Jacobians and terminal-residual Jacobians with respect to
the flattened control vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import ballistics
from .ballistics import BallParams
from .kinematics import KinematicModel, _cross3, fk, fk_with_jacobian

NQ = 7          # joints
NX = 15         # composite state dim: q (7) + qdot (7) + t (1)
NU = 8          # per-stage control dim: dqdot (7) + dt (1)

VEL_EPS = 1e-6  # below this predicted ball speed the alignment terms degenerate


class OutOfHorizon(ValueError):
    """Query time past the end of the planned stages."""


class DegenerateVelocity(ValueError):
    """Predicted ball speed too small to define an approach direction."""


@dataclass(frozen=True)
class StageState:
    q: np.ndarray      # (7,)
    qdot: np.ndarray   # (7,)
    t: float           # absolute seconds

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(NQ))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float).reshape(NQ))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot, [self.t]])


@dataclass(frozen=True)
class StageControl:
    dqdot: np.ndarray  # (7,) velocity change over the acceleration phase
    dt: float          # stage duration, >= 0

    def __post_init__(self):
        object.__setattr__(self, "dqdot", np.asarray(self.dqdot, dtype=float).reshape(NQ))
        if self.dt < 0.0:
            raise ValueError(f"stage duration must be >= 0, got {self.dt}")


@dataclass(frozen=True)
class Limits:
    qddot_a: np.ndarray  # (7,) symmetric acceleration bound, > 0
    q_lo: np.ndarray
    q_hi: np.ndarray
    qdot_lo: np.ndarray
    qdot_hi: np.ndarray

    def __post_init__(self):
        for name in ("qddot_a", "q_lo", "q_hi", "qdot_lo", "qdot_hi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(NQ))
        if not np.all(self.qddot_a > 0):
            raise ValueError("acceleration bounds must be positive")
        if not np.all(self.q_lo < self.q_hi):
            raise ValueError("position bounds must satisfy lo < hi")
        if not (np.all(self.qdot_lo < 0) and np.all(self.qdot_hi > 0)):
            raise ValueError("velocity bounds must straddle zero")


def default_limits() -> Limits:
    return Limits(
        qddot_a=[12.0, 25.0, 25.0, 25.0, 25.0, 25.0, 25.0],
        q_lo=[-1.35, -2.9, -2.0, -2.4, -2.9, -2.0, -2.9],
        q_hi=[1.35, 2.9, 2.0, 2.4, 2.9, 2.0, 2.9],
        qdot_lo=[-3.0, -4.4, -4.4, -4.4, -5.6, -5.6, -7.3],
        qdot_hi=[3.0, 4.4, 4.4, 4.4, 5.6, 5.6, 7.3],
    )


@dataclass(frozen=True)
class CatchSpec:
    """Catching-problem parameters: ball estimate plus tolerances and weights."""

    ball: BallParams
    eps_p: float = 0.05   # position tolerance, meters
    eps_r: float = 0.35   # angular tolerance, radians
    v_c: float = 1.0      # desired catching speed along the net normal, m/s
    w_p: float = 10.0     # pose terminal-cost weight
    w_v: float = 1.0      # velocity terminal-cost weight
    lam: float = 10.0     # time weight in the running cost

    def __post_init__(self):
        if self.eps_p <= 0.0:
            raise ValueError("eps_p must be positive")
        if not (0.0 < self.eps_r < np.pi / 2):
            raise ValueError("eps_r must be in (0, pi/2)")
        if self.lam <= 0.0:
            raise ValueError("lam must be positive")
        if self.w_p < 0.0 or self.w_v < 0.0:
            raise ValueError("weights must be nonnegative")


# ---------------------------------------------------------------------------
# Stage dynamics
# ---------------------------------------------------------------------------

def stage_transition(x: StageState, u: StageControl, limits: Limits) -> StageState:
    """One accelerate-then-cruise stage step of the composite state."""
    inv_a = 1.0 / limits.qddot_a
    q_next = x.q + (x.qdot + u.dqdot) * u.dt - 0.5 * inv_a * (u.dqdot * np.abs(u.dqdot))
    return StageState(q=q_next, qdot=x.qdot + u.dqdot, t=x.t + u.dt)


def fold(x0: StageState, controls: Sequence[StageControl], limits: Limits) -> List[StageState]:
    """States x[0..N] from applying every stage transition in order."""
    states = [x0]
    for u in controls:
        states.append(stage_transition(states[-1], u, limits))
    return states


def total_duration(controls: Sequence[StageControl]) -> float:
    return float(sum(u.dt for u in controls))


def decode(x0: StageState, controls: Sequence[StageControl], tau: float,
           limits: Limits) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous-time (q, qdot) at elapsed time ``tau`` into the plan.

    Within each stage, joint i runs at +/- its acceleration bound for
    |dqdot_i| / qddot_a_i seconds and then cruises. ``tau`` is relative to
    x0.t and must lie within the total plan duration.
    """
    horizon = total_duration(controls)
    if tau < 0.0 or tau > horizon + 1e-9:
        raise OutOfHorizon(f"tau={tau} outside [0, {horizon}]")
    tau = min(tau, horizon)

    state = x0
    remaining = tau
    for u in controls:
        if remaining > u.dt:
            state = stage_transition(state, u, limits)
            remaining -= u.dt
            continue
        sgn = np.sign(u.dqdot)
        t_acc = np.abs(u.dqdot) / limits.qddot_a
        tcl = np.minimum(remaining, t_acc)
        acc = sgn * limits.qddot_a
        q = (state.q + state.qdot * tcl + 0.5 * acc * tcl ** 2
             + (state.qdot + u.dqdot) * np.maximum(0.0, remaining - t_acc))
        qdot = state.qdot + acc * tcl
        return q, qdot
    return state.q.copy(), state.qdot.copy()


# ---------------------------------------------------------------------------
# Terminal cost and endpoint constraints
# ---------------------------------------------------------------------------

def _ball_direction(ball: BallParams, t: float) -> Tuple[np.ndarray, np.ndarray, float]:
    p_o, v_o = ballistics.predict(ball, t)
    speed = float(np.linalg.norm(v_o))
    if speed < VEL_EPS:
        raise DegenerateVelocity(f"predicted ball speed {speed} below {VEL_EPS}")
    return p_o, v_o, speed


def terminal_cost(x_N: StageState, spec: CatchSpec, model: KinematicModel) -> float:
    """Soft pose/velocity cost at the catch state."""
    p_o, v_o, speed = _ball_direction(spec.ball, x_N.t)
    pose, J = fk_with_jacobian(model, x_N.q)
    v_hat = v_o / speed
    y_hat = pose.net_normal
    r_pos = pose.p - p_o
    align = 1.0 - float(y_hat @ v_hat)
    v_head = J[:3] @ x_N.qdot
    r_vel = pose.R.T @ v_head - np.array([0.0, spec.v_c, 0.0])
    return float(spec.w_p * (r_pos @ r_pos + align) + spec.w_v * (r_vel @ r_vel))


def endpoint_constraints(x_N: StageState, spec: CatchSpec, model: KinematicModel) -> np.ndarray:
    """Catch-pose inequality residuals, feasible when >= 0.

    Row 0: position tolerance minus net-to-predicted-ball distance.
    Row 1: net-normal/ball-velocity alignment minus cos(eps_r).
    """
    p_o, v_o, speed = _ball_direction(spec.ball, x_N.t)
    pose = fk(model, x_N.q)
    dist = float(np.linalg.norm(pose.p - p_o))
    align = float(pose.net_normal @ (v_o / speed))
    return np.array([spec.eps_p - dist, align - np.cos(spec.eps_r)])


# ---------------------------------------------------------------------------
# Objective and path constraints
# ---------------------------------------------------------------------------

def objective(x0: StageState, controls: Sequence[StageControl], spec: CatchSpec,
              model: KinematicModel, limits: Optional[Limits] = None) -> float:
    """Smooth discrete objective: sum of stage costs plus terminal cost."""
    limits = limits if limits is not None else default_limits()
    running = sum(spec.lam * u.dt + float(u.dqdot @ u.dqdot) for u in controls)
    x_N = fold(x0, controls, limits)[-1]
    return running + terminal_cost(x_N, spec, model)


def exact_stage_cost(u: StageControl, limits: Limits, lam: float) -> float:
    """Exact (nonsmooth) stage cost of the underlying integral objective.

    Diagnostic only; the solver minimizes the smooth ||dqdot||^2 form instead.
    """
    return float(lam * u.dt + limits.qddot_a @ np.abs(u.dqdot))


def stage_extremum(q_i: float, qdot_i: float, qddot_a_i: float) -> float:
    """Intra-stage position extremum when the velocity changes sign."""
    return q_i + np.sign(qdot_i) * qdot_i * qdot_i / (2.0 * qddot_a_i)


def path_constraints(x0: StageState, controls: Sequence[StageControl],
                     limits: Limits) -> np.ndarray:
    """All limit-constraint residuals of a plan, feasible when >= 0.

    Blocks, in order:
      1. acceleration: qddot_a * dt[k] - |dqdot[k]|, per stage, per joint;
      2. velocity box at every stage node k = 0..N: (qdot - lo, hi - qdot);
      3. position box at every stage node, same layout;
      4. intra-stage extrema: for each (joint, stage) whose velocity crosses
         zero mid-stage, the position box applied at the parabola extremum.
    """
    states = fold(x0, controls, limits)
    rows: List[np.ndarray] = []
    for u in controls:
        rows.append(limits.qddot_a * u.dt - np.abs(u.dqdot))
    for s in states:
        rows.append(s.qdot - limits.qdot_lo)
        rows.append(limits.qdot_hi - s.qdot)
    for s in states:
        rows.append(s.q - limits.q_lo)
        rows.append(limits.q_hi - s.q)
    for k, u in enumerate(controls):
        s = states[k]
        crossing = s.qdot * (s.qdot + u.dqdot) < 0.0
        for i in np.flatnonzero(crossing):
            q_hat = stage_extremum(s.q[i], s.qdot[i], limits.qddot_a[i])
            rows.append(np.array([limits.q_hi[i] - q_hat, q_hat - limits.q_lo[i]]))
    return np.concatenate(rows) if rows else np.zeros(0)


# ---------------------------------------------------------------------------
# Sensitivity machinery for the solver
# ---------------------------------------------------------------------------

def transition_jacobians(x: StageState, u: StageControl,
                         limits: Limits) -> Tuple[np.ndarray, np.ndarray]:
    """d(next state)/d(state), d(next state)/d(control), both at (x, u).

    The |dqdot| term has derivative sign(dqdot) * 2|dqdot| / (2 qddot_a),
    taken as 0 at dqdot = 0.
    """
    A = np.eye(NX)
    A[:NQ, NQ:2 * NQ] = np.eye(NQ) * u.dt
    B = np.zeros((NX, NU))
    B[:NQ, :NQ] = np.diag(u.dt - np.abs(u.dqdot) / limits.qddot_a)
    B[:NQ, NQ] = x.qdot + u.dqdot
    B[NQ:2 * NQ, :NQ] = np.eye(NQ)
    B[2 * NQ, NQ] = 1.0
    return A, B


def rollout_with_sensitivity(x0: StageState, controls: Sequence[StageControl],
                             limits: Limits) -> Tuple[List[StageState], List[np.ndarray]]:
    """States x[0..N] plus dx[k]/du for the flattened control vector.

    Control layout: u_flat = (dqdot[0], dt[0], dqdot[1], dt[1], ...).
    """
    n = len(controls)
    states = [x0]
    sens = [np.zeros((NX, NU * n))]
    for k, u in enumerate(controls):
        A, B = transition_jacobians(states[-1], u, limits)
        X = A @ sens[-1]
        X[:, NU * k:NU * (k + 1)] += B
        states.append(stage_transition(states[-1], u, limits))
        sens.append(X)
    return states, sens


@dataclass
class TerminalEval:
    """Terminal residuals, optionally with Jacobians w.r.t. the composite
    state (NX columns; None on cost-only evaluations).

    The terminal cost is sum(w_sq * r_sq^2) + sum(w_lin * r_lin); inequality
    rows c_ineq are feasible when >= 0.
    """

    r_sq: np.ndarray
    w_sq: np.ndarray
    J_sq: Optional[np.ndarray]
    r_lin: np.ndarray
    w_lin: np.ndarray
    J_lin: Optional[np.ndarray]
    c_ineq: np.ndarray
    J_ineq: Optional[np.ndarray]

    def cost(self) -> float:
        total = float(self.w_sq @ (self.r_sq ** 2))
        if self.r_lin.size:
            total += float(self.w_lin @ self.r_lin)
        return total

    def cost_gradient(self) -> np.ndarray:
        grad = 2.0 * (self.w_sq * self.r_sq) @ self.J_sq
        if self.r_lin.size:
            grad = grad + self.w_lin @ self.J_lin
        return grad


class CatchTerminal:
    """Terminal model of the catching problem: residuals, endpoint rows,
    and their Jacobians w.r.t. (q, qdot, t).

    The alignment part of the pose cost, 1 - y_hat . v_hat, equals
    0.5 * ||y_hat - v_hat||^2 for unit vectors, so it is carried as a
    squared residual (y_hat - v_hat) / sqrt(2) and gets Gauss-Newton
    curvature like the other terms.
    """

    _FD_STEP = 1e-6
    _SQRT_HALF = np.sqrt(0.5)

    def __init__(self, spec: CatchSpec, model: KinematicModel):
        self.spec = spec
        self.model = model

    def _head_frame_velocity(self, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
        pose, J = fk_with_jacobian(self.model, q)
        return pose.R.T @ (J[:3] @ qdot)

    def evaluate(self, x: StageState, with_jac: bool = True) -> TerminalEval:
        spec = self.spec
        p_o, v_o, speed = _ball_direction(spec.ball, x.t)
        v_hat = v_o / speed
        pose, J = fk_with_jacobian(self.model, x.q)
        y_hat = pose.net_normal
        Jv, Jw = J[:3], J[3:]

        r_pos = pose.p - p_o
        r_dir = (y_hat - v_hat) * self._SQRT_HALF
        v_frame = pose.R.T @ (Jv @ x.qdot)
        r_vel = v_frame - np.array([0.0, spec.v_c, 0.0])
        dist = float(np.linalg.norm(r_pos))
        align = float(y_hat @ v_hat)
        c = np.array([spec.eps_p - dist, align - np.cos(spec.eps_r)])

        r_sq = np.concatenate([r_pos, r_dir, r_vel])
        w_sq = np.array([spec.w_p] * 6 + [spec.w_v] * 3)
        empty = np.zeros(0)
        if not with_jac:
            return TerminalEval(r_sq=r_sq, w_sq=w_sq, J_sq=None,
                                r_lin=empty, w_lin=empty, J_lin=None,
                                c_ineq=c, J_ineq=None)

        # position residual p_h - p_o: exact Jacobian
        J_pos = np.zeros((3, NX))
        J_pos[:, :NQ] = Jv
        J_pos[:, NX - 1] = -v_o

        # direction residual (y_hat - v_hat) / sqrt(2)
        dy_dq = np.empty((3, NQ))          # column j: w_j x y_hat
        for j in range(NQ):
            dy_dq[:, j] = _cross3(Jw[:, j], y_hat)
        g_vec = ballistics.gravity_vector(spec.ball.g)
        dvhat_dt = (g_vec - v_hat * float(v_hat @ g_vec)) / speed
        J_dir = np.zeros((3, NX))
        J_dir[:, :NQ] = dy_dq * self._SQRT_HALF
        J_dir[:, NX - 1] = -dvhat_dt * self._SQRT_HALF

        # head-frame velocity residual R^T v_h - (0, v_c, 0)
        J_vel = np.zeros((3, NX))
        J_vel[:, NQ:2 * NQ] = pose.R.T @ Jv
        # q-dependence involves the FK Hessian; differentiate numerically
        h = self._FD_STEP
        for j in range(NQ):
            q_p = x.q.copy(); q_p[j] += h
            q_m = x.q.copy(); q_m[j] -= h
            J_vel[:, j] = (self._head_frame_velocity(q_p, x.qdot)
                           - self._head_frame_velocity(q_m, x.qdot)) / (2 * h)

        # endpoint inequalities
        J_c = np.zeros((2, NX))
        J_c[0] = -(r_pos / max(dist, 1e-9)) @ J_pos
        J_c[1, :NQ] = v_hat @ dy_dq
        J_c[1, NX - 1] = float(y_hat @ dvhat_dt)

        return TerminalEval(
            r_sq=r_sq, w_sq=w_sq, J_sq=np.vstack([J_pos, J_dir, J_vel]),
            r_lin=empty, w_lin=empty, J_lin=np.zeros((0, NX)),
            c_ineq=c, J_ineq=J_c,
        )
