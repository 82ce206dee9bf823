"""Deterministic episodic catching simulator.

One episode: a mechanical thrower launches a ball toward the robot; the
robot tracks commanded joint velocities under acceleration clamps at a fixed
control rate; the ball flies ballistically until it meets the net. Contact
with the net is a declared stand-in for real mesh/ball dynamics: a ball
entering the net cylinder below a relative-speed threshold is captured (its
relative velocity decays on a short time constant, then it rides the net);
a faster ball bounces out. A catch is declared after the ball has been
continuously detected in the net for a hold time.

All randomness (throw sampling, observation noise) flows from the per-episode
seed, so (seed, command sequence) fully determines the episode.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import ballistics, rewards
from .ballistics import BallParams
from .config import EnvConfig, RewardConfig, ThrowerConfig
from .kinematics import KinematicModel, fk_with_jacobian
from .rewards import RewardTerms
from .stage_ocp import NQ, Limits

FLIGHT = "flight"
CONTACT = "contact"
STUCK = "stuck"
LANDED = "landed"

LEFT = "left"
RIGHT = "right"
NONE = "none"


class EpisodeOver(RuntimeError):
    """step() called after the episode terminated."""


@dataclass(frozen=True)
class Observation:
    """Policy input: recent joint positions and the predicted ball track."""

    joint_history: np.ndarray   # (n_hist, 7), oldest row first
    predicted_ball: np.ndarray  # (n_pred, 6): position rows then velocity columns


@dataclass
class EpisodeResult:
    caught: bool
    min_net_ball_distance: float
    reward_terms: Dict[str, float]
    total_reward: float
    catch_side: str
    constraint_violated: bool
    steps: int
    catch_time: Optional[float] = None
    trace: Optional[Dict[str, np.ndarray]] = None


@dataclass(frozen=True)
class ThrowSample:
    yaw_deg: float
    speed: float
    side: str
    release: np.ndarray
    velocity: np.ndarray

    def ball_params(self, g: float) -> BallParams:
        return BallParams(p_ref=self.release, v_ref=self.velocity, t_ref=0.0, g=g)


def sample_throw(thrower: ThrowerConfig, rng: np.random.Generator) -> ThrowSample:
    """Seeded draw of one throw: side, yaw within the side's half-range,
    jittered speed, fixed loft."""
    right = rng.random() < thrower.right_bias
    lo, hi = thrower.yaw_range
    yaw_deg = rng.uniform(0.0, hi) if right else rng.uniform(lo, 0.0)
    speed = thrower.speed_mean + rng.uniform(-thrower.speed_jitter, thrower.speed_jitter)
    yaw = np.radians(yaw_deg)
    loft = np.radians(thrower.loft_angle)
    velocity = np.array([speed * np.sin(yaw), speed * np.cos(yaw), speed * np.tan(loft)])
    release = np.array([0.0, -thrower.distance, thrower.release_height])
    return ThrowSample(yaw_deg=yaw_deg, speed=speed, side=RIGHT if right else LEFT,
                       release=release, velocity=velocity)


class CatchEnv:
    """Single-episode simulator handle. One owner, single-threaded; distinct
    instances are fully independent."""

    def __init__(self, env: EnvConfig, thrower: ThrowerConfig, limits: Limits,
                 model: KinematicModel, reward_cfg: Optional[RewardConfig] = None,
                 ready_q: Optional[np.ndarray] = None, seed: int = 0,
                 record_trace: bool = False):
        self.cfg = env
        self.thrower = thrower
        self.limits = limits
        self.model = model
        self.reward_cfg = reward_cfg or RewardConfig()
        self.ready_q = np.zeros(NQ) if ready_q is None else np.asarray(ready_q, dtype=float)
        self.record_trace = record_trace
        self.reset(seed)

    # -- lifecycle -----------------------------------------------------------

    def reset(self, seed: int) -> Observation:
        self.seed = int(seed)
        self.rng = np.random.default_rng(np.random.PCG64(seed))
        self.throw = sample_throw(self.thrower, self.rng)

        self.t = 0.0
        self.step_idx = 0
        self.done = False
        self.q = self.ready_q.copy()
        self.qdot = np.zeros(NQ)
        self.p_ball = self.throw.release.copy()
        self.v_ball = self.throw.velocity.copy()
        self.regime = FLIGHT
        self._stuck_local: Optional[np.ndarray] = None

        pose, J = fk_with_jacobian(self.model, self.q)
        self._pose, self._J = pose, J
        self._v_head = J[:3] @ self.qdot

        self._hist: deque = deque(maxlen=self.cfg.n_hist)
        self._meas_t: List[float] = []
        self._meas_p: List[np.ndarray] = []
        self._fit: Optional[BallParams] = None
        self._cmd_queue: deque = deque(
            [np.zeros(NQ)] * self.cfg.command_delay_steps, maxlen=None)

        self.min_dist = float(np.linalg.norm(self.p_ball - pose.p))
        self.caught = False
        self.catch_side = NONE
        self.catch_time: Optional[float] = None
        self._in_net_time = 0.0
        self._rel_speeds: List[float] = []
        self._close_flags: List[bool] = []
        self._violation_sum: List[float] = []
        self._violated = False
        self._orientation_sample: Optional[float] = None
        self._was_close = False
        self._trace: Dict[str, List] = {k: [] for k in
                                        ("t", "q", "qdot", "p_ball", "v_ball", "regime")}

        self._hist.append(self.q.copy())
        self._measure()
        return self.observe()

    # -- observation ---------------------------------------------------------

    def _measure(self):
        if self.regime in (FLIGHT,):
            noise = self.rng.normal(0.0, self.cfg.obs_noise_std, 3) \
                if self.cfg.obs_noise_std > 0 else np.zeros(3)
            self._meas_t.append(self.t)
            self._meas_p.append(self.p_ball + noise)
            if len(self._meas_t) >= 3:
                try:
                    self._fit = ballistics.fit_arrays(
                        np.array(self._meas_t), np.stack(self._meas_p),
                        g=self.cfg.gravity)
                except ballistics.InsufficientData:
                    self._fit = None

    def ball_estimate(self) -> Optional[BallParams]:
        """Latest least-squares flight fit, None until enough measurements."""
        return self._fit

    def observe(self) -> Observation:
        hist = np.zeros((self.cfg.n_hist, NQ))
        if self._hist:
            stacked = np.stack(self._hist)
            hist[-stacked.shape[0]:] = stacked
        if self._fit is not None:
            times = self.t + self.cfg.control_dt * np.arange(self.cfg.n_pred)
            pred = ballistics.predict_track(self._fit, times)
        else:
            pred = np.zeros((self.cfg.n_pred, 6))
        return Observation(joint_history=hist, predicted_ball=pred)

    # -- dynamics ------------------------------------------------------------

    def _advance_robot(self, command: np.ndarray):
        lm = self.limits
        dt = self.cfg.control_dt
        command = np.asarray(command, dtype=float).reshape(NQ)
        self._cmd_queue.append(command)
        active = self._cmd_queue.popleft()

        accel = np.clip((active - self.qdot) / dt, -lm.qddot_a, lm.qddot_a)
        qdot_new = self.qdot + accel * dt
        q_new = self.q + 0.5 * (self.qdot + qdot_new) * dt

        viol = 0.0
        over = np.maximum(0.0, np.abs(qdot_new) - lm.qdot_hi)
        viol += float(np.sum(over / lm.qdot_hi))
        below, above = q_new < lm.q_lo, q_new > lm.q_hi
        if below.any() or above.any():
            span = lm.q_hi - lm.q_lo
            viol += float(np.sum(np.maximum(0.0, q_new - lm.q_hi) / span))
            viol += float(np.sum(np.maximum(0.0, lm.q_lo - q_new) / span))
            q_new = np.clip(q_new, lm.q_lo, lm.q_hi)
            qdot_new = np.where(below & (qdot_new < 0), 0.0, qdot_new)
            qdot_new = np.where(above & (qdot_new > 0), 0.0, qdot_new)
        self._violation_sum.append(viol)
        if viol > 0:
            self._violated = True

        self.q, self.qdot = q_new, qdot_new
        pose, J = fk_with_jacobian(self.model, self.q)
        v_head_new = J[:3] @ self.qdot
        self._head_accel = (v_head_new - self._v_head) / dt
        self._pose, self._J, self._v_head = pose, J, v_head_new

    def _net_coords(self, p: np.ndarray) -> Tuple[float, float]:
        """Axial (along the net normal, 0 at the net center) and radial
        offsets of a point; the pocket occupies axial in [-net_depth, 0]."""
        d = p - self._pose.p
        y_hat = self._pose.net_normal
        s = float(d @ y_hat)
        radial = float(np.linalg.norm(d - s * y_hat))
        return s, radial

    def _inside_net(self, p: np.ndarray) -> bool:
        s, radial = self._net_coords(p)
        return -self.cfg.net_depth <= s <= 1e-9 and radial <= self.cfg.net_radius

    def _advance_ball(self):
        dt = self.cfg.control_dt
        g = np.array([0.0, 0.0, -self.cfg.gravity])
        y_hat = self._pose.net_normal

        if self.regime == LANDED:
            return
        if self.regime == STUCK:
            p_new = self._pose.p + self._pose.R @ self._stuck_local
            self.v_ball = (p_new - self.p_ball) / dt
            self.p_ball = p_new
            if float(np.linalg.norm(self._head_accel)) > self.cfg.detach_accel:
                self.regime = CONTACT
            return

        if self.regime == FLIGHT:
            self.p_ball = self.p_ball + self.v_ball * dt + 0.5 * g * dt * dt
            self.v_ball = self.v_ball + g * dt
            if self.p_ball[2] <= 0.0:
                self.regime = LANDED
                self.p_ball[2] = 0.0
                self.v_ball[:] = 0.0
                return
            if self._inside_net(self.p_ball):
                u = self.v_ball - self._v_head
                if u @ y_hat > 0.0:
                    if float(np.linalg.norm(u)) <= self.cfg.capture_speed_limit:
                        self.regime = CONTACT
                    else:
                        u_par = (u @ y_hat) * y_hat
                        self.v_ball = self._v_head + u - (1.0 + self.cfg.bounce_restitution) * u_par
            return

        # CONTACT: relative velocity decays toward the net's motion
        u = self.v_ball - self._v_head
        u = (u + g * dt) * np.exp(-dt / self.cfg.capture_tau)
        self.v_ball = self._v_head + u
        self.p_ball = self.p_ball + self.v_ball * dt
        s, radial = self._net_coords(self.p_ball)
        if s > 0.0:  # pressed past the pocket bottom: hard reflect
            self.p_ball = self.p_ball - s * y_hat
            u = self.v_ball - self._v_head
            u_n = u @ y_hat
            if u_n > 0.0:
                self.v_ball = self._v_head + u - (1.0 + self.cfg.bounce_restitution) * u_n * y_hat
            s = 0.0
        if not (-self.cfg.net_depth <= s and radial <= self.cfg.net_radius):
            self.regime = FLIGHT
            return
        if float(np.linalg.norm(self.v_ball - self._v_head)) < self.cfg.stick_speed:
            self.regime = STUCK
            self._stuck_local = self._pose.R.T @ (self.p_ball - self._pose.p)

    # -- catch detection -----------------------------------------------------

    def in_net(self) -> bool:
        """Instantaneous in-net detection: containment plus relative-speed gate."""
        if self.regime == LANDED:
            return False
        rel = float(np.linalg.norm(self.v_ball - self._v_head))
        return self._inside_net(self.p_ball) and rel < self.cfg.catch_rel_speed

    def _update_catch(self):
        if self.in_net():
            self._in_net_time += self.cfg.control_dt
            if not self.caught and self._in_net_time >= self.cfg.catch_hold_time:
                self.caught = True
                self.catch_time = self.t
                self.catch_side = RIGHT if self._pose.p[0] >= 0.0 else LEFT
        else:
            self._in_net_time = 0.0

    # -- stepping ------------------------------------------------------------

    def step(self, command: np.ndarray) -> Tuple[Observation, Dict]:
        if self.done:
            raise EpisodeOver("episode already terminated")

        self._advance_robot(command)
        self._advance_ball()
        self.t += self.cfg.control_dt
        self.step_idx += 1

        dist = float(np.linalg.norm(self.p_ball - self._pose.p))
        self.min_dist = min(self.min_dist, dist)
        close = dist <= self.reward_cfg.close_cutoff
        rel_speed = float(np.linalg.norm(self.v_ball - self._v_head))
        self._close_flags.append(close)
        self._rel_speeds.append(rel_speed)
        if close and not self._was_close:
            self._was_close = True
            speed = float(np.linalg.norm(self.v_ball))
            if speed > 1e-9:
                self._orientation_sample = rewards.orientation_reward(
                    self.v_ball / speed, self._pose.net_normal)
        self._update_catch()

        self._hist.append(self.q.copy())
        self._measure()
        if self.record_trace:
            for key, val in (("t", self.t), ("q", self.q.copy()),
                             ("qdot", self.qdot.copy()), ("p_ball", self.p_ball.copy()),
                             ("v_ball", self.v_ball.copy()), ("regime", self.regime)):
                self._trace[key].append(val)

        if self.regime == LANDED or self.t >= self.cfg.episode_horizon - 1e-9:
            self.done = True

        info = {
            "t": self.t, "dist": dist, "regime": self.regime, "in_net": self.in_net(),
            "caught": self.caught, "done": self.done, "rel_speed": rel_speed,
            "q": self.q.copy(), "qdot": self.qdot.copy(),
            "p_ball": self.p_ball.copy(), "v_ball": self.v_ball.copy(),
        }
        return self.observe(), info

    # -- scoring -------------------------------------------------------------

    def result(self, mode: str = rewards.SIM) -> EpisodeResult:
        cfg = self.reward_cfg
        terms = RewardTerms(
            position=rewards.position_reward(self.min_dist, cfg),
            orientation=self._orientation_sample or 0.0,
            stability=rewards.stability_reward(self._rel_speeds, self._close_flags,
                                               self.cfg.control_dt, cfg),
            catch=rewards.catch_reward(self.caught),
            constraint=rewards.constraint_penalty(self._violation_sum,
                                                  self.cfg.control_dt, cfg),
            fault_free=0.0 if self._violated else 1.0,
        )
        trace = None
        if self.record_trace:
            trace = {k: np.array(v) for k, v in self._trace.items() if k != "regime"}
            trace["regime"] = np.array(self._trace["regime"])
        return EpisodeResult(
            caught=self.caught,
            min_net_ball_distance=self.min_dist,
            reward_terms=terms.as_dict(),
            total_reward=rewards.total_reward(terms, mode, cfg),
            catch_side=self.catch_side if self.caught else NONE,
            constraint_violated=self._violated,
            steps=self.step_idx,
            catch_time=self.catch_time,
            trace=trace,
        )

    # -- test hooks ----------------------------------------------------------

    def force_state(self, q: Optional[np.ndarray] = None,
                    qdot: Optional[np.ndarray] = None,
                    p_ball: Optional[np.ndarray] = None,
                    v_ball: Optional[np.ndarray] = None):
        """Teleport pieces of the state; for oracle tests only."""
        if q is not None:
            self.q = np.asarray(q, dtype=float).copy()
        if qdot is not None:
            self.qdot = np.asarray(qdot, dtype=float).copy()
        pose, J = fk_with_jacobian(self.model, self.q)
        self._pose, self._J = pose, J
        self._v_head = J[:3] @ self.qdot
        self._head_accel = np.zeros(3)
        if p_ball is not None:
            self.p_ball = np.asarray(p_ball, dtype=float).copy()
        if v_ball is not None:
            self.v_ball = np.asarray(v_ball, dtype=float).copy()


def reset(env: EnvConfig, thrower: ThrowerConfig, seed: int, limits: Limits,
          model: KinematicModel, reward_cfg: Optional[RewardConfig] = None,
          ready_q: Optional[np.ndarray] = None) -> Tuple[CatchEnv, Observation]:
    """Build a fresh episode handle and its initial observation."""
    handle = CatchEnv(env, thrower, limits, model, reward_cfg, ready_q, seed)
    return handle, handle.observe()


def run_episode(env: CatchEnv,
                policy: Callable[[Observation, float], np.ndarray],
                mode: str = rewards.SIM) -> EpisodeResult:
    """Step ``policy(obs, t) -> qdot command`` until the episode ends."""
    obs = env.observe()
    while not env.done:
        obs, _ = env.step(policy(obs, env.t))
    return env.result(mode)
