"""Runnable catching agents behind a common stepping interface.

The trajectory-optimizer agent replans from the latest ball estimate and
robot state, decodes the newest plan into velocity commands each tick, and
hands over to the open-loop cradle at the planned catch time. Replanning can
run synchronously every K ticks (deterministic mode, used by all recorded
experiments) or in a background thread that publishes plan snapshots which
the stepper reads without ever blocking.

The blackbox agent is a pure function of the observation: one policy forward
pass per tick.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from . import cradle, policy, sqp_solver
from .ballistics import BallParams
from .config import AgentConfig, CradleConfig, EnvConfig, OcpConfig
from .kinematics import KinematicModel
from .policy import PolicyArchitecture
from .sim_env import Observation
from .sqp_solver import INFEASIBLE, SOLVED, SqpSettings, SqpSolution
from .stage_ocp import (NQ, CatchSpec, Limits, StageControl, StageState, decode,
                        total_duration)

INTERCEPT = "intercept"
CRADLE = "cradle"
DONE = "done"


@dataclass(frozen=True)
class AgentCommand:
    qdot_cmd: np.ndarray
    phase: str


@dataclass(frozen=True)
class PlanSnapshot:
    """One published plan: immutable, swapped wholesale by the writer."""

    x0: StageState
    controls: Tuple[StageControl, ...]
    t_f: float                 # absolute catch time
    solve_status: str
    ball: BallParams
    seq: int
    stale: bool = False

    def decode_at(self, t_abs: float, limits: Limits) -> Tuple[np.ndarray, np.ndarray]:
        tau = float(np.clip(t_abs - self.x0.t, 0.0, self.t_f - self.x0.t))
        return decode(self.x0, list(self.controls), tau, limits)

    def consistent(self) -> bool:
        """Internal redundancy check used by the atomicity test."""
        return abs(self.t_f - (self.x0.t + total_duration(self.controls))) < 1e-9


class _SnapshotCell:
    """Single-writer several-reader snapshot slot with atomic replace."""

    def __init__(self):
        self._ref: Optional[PlanSnapshot] = None

    def publish(self, snap: PlanSnapshot):
        self._ref = snap  # atomic reference swap

    def read(self) -> Optional[PlanSnapshot]:
        return self._ref


def observation_ball_estimate(obs: Observation, now: float) -> Optional[BallParams]:
    """Flight parameters implied by the first predicted-track row; None while
    the predictor is still warming up (all-zero rows)."""
    row = obs.predicted_ball[0]
    if not np.any(obs.predicted_ball):
        return None
    return BallParams(p_ref=row[:3].copy(), v_ref=row[3:].copy(), t_ref=max(now, 0.0))


class SqpAgent:
    """Replanning trajectory-optimization agent.

    ``threaded=False`` (default) re-solves synchronously every
    ``replan_every`` ticks, which makes whole episodes bitwise reproducible.
    ``threaded=True`` runs the same solve loop in a daemon thread that
    publishes snapshots; the stepper never waits on it.
    """

    def __init__(self, ocp: OcpConfig, limits: Limits, model: KinematicModel,
                 env_cfg: EnvConfig, agent_cfg: Optional[AgentConfig] = None,
                 cradle_cfg: Optional[CradleConfig] = None,
                 solver_settings: Optional[SqpSettings] = None,
                 threaded: bool = False,
                 solve_fn: Optional[Callable[..., SqpSolution]] = None):
        self.ocp = ocp
        self.limits = limits
        self.model = model
        self.dt = env_cfg.control_dt
        self.agent_cfg = agent_cfg or AgentConfig()
        self.cradle_params = _cradle_params(cradle_cfg or CradleConfig(), ocp,
                                            env_cfg)
        self.cradle_duration = (cradle_cfg or CradleConfig()).duration_factor \
            * self.cradle_params.t_s
        self.settings = solver_settings or SqpSettings(optimality_tolerance=1e-5)
        self.solve_fn = solve_fn or sqp_solver.solve
        self.threaded = threaded

        self._cell = _SnapshotCell()
        self._seq = 0
        self._tick = 0
        self.phase = INTERCEPT
        self._qdot_est = np.zeros(NQ)
        self._last_cmd = np.zeros(NQ)
        self._cradle_qdot: Optional[np.ndarray] = None
        self._state_lock = threading.Lock()
        self._latest_input: Optional[Tuple[np.ndarray, np.ndarray, float, BallParams]] = None
        self._thread: Optional[threading.Thread] = None
        self._stop = threading.Event()

    # -- replanning ----------------------------------------------------------

    def _warm_start(self, now: float) -> Optional[Sequence[StageControl]]:
        snap = self._cell.read()
        if snap is None:
            return None
        remaining = snap.t_f - now
        if remaining <= 2 * self.dt:
            return None
        q_now, qdot_now = snap.decode_at(now, self.limits)
        final_qdot = snap.x0.qdot + sum(c.dqdot for c in snap.controls)
        n = len(snap.controls)
        per = max(remaining / n, 1e-3)
        dq_total = final_qdot - qdot_now
        return [StageControl(dqdot=dq_total / n, dt=per) for _ in range(n)]

    def replan_now(self, q: np.ndarray, qdot: np.ndarray, now: float,
                   ball: BallParams, iteration_budget: Optional[int] = None) -> PlanSnapshot:
        """One solve from the given state and ball estimate; publishes and
        returns the resulting snapshot (previous one, marked stale, when the
        solve comes back infeasible)."""
        warm = self._warm_start(now)
        budget = iteration_budget or (
            self.agent_cfg.warm_iterations if warm is not None
            else self.agent_cfg.cold_start_iterations)
        settings = replace(self.settings, max_iterations=budget)
        spec = CatchSpec(ball=ball, eps_p=self.ocp.eps_p, eps_r=self.ocp.eps_r,
                         v_c=self.ocp.v_c, w_p=self.ocp.w_p, w_v=self.ocp.w_v,
                         lam=self.ocp.lam)
        x0 = StageState(q=q, qdot=qdot, t=now)
        sol = self.solve_fn(x0, spec, self.limits, self.model, warm_start=warm,
                            settings=settings, n_stages=self.ocp.n_stages)

        prev = self._cell.read()
        acceptable = sol.status == SOLVED or (
            sol.status != INFEASIBLE and sol.final_constraint_violation <= 1e-3)
        if not acceptable and prev is not None:
            snap = replace(prev, stale=True)
        else:
            self._seq += 1
            snap = PlanSnapshot(
                x0=x0, controls=tuple(sol.controls),
                t_f=now + total_duration(sol.controls),
                solve_status=sol.status, ball=ball, seq=self._seq,
                stale=not acceptable)
        self._cell.publish(snap)
        return snap

    def replan_stream(self, inputs: Iterable[Tuple[np.ndarray, np.ndarray, float, BallParams]]
                      ) -> Iterable[PlanSnapshot]:
        """Synchronous snapshot stream over a sequence of replan inputs."""
        for q, qdot, now, ball in inputs:
            yield self.replan_now(q, qdot, now, ball)

    def _thread_body(self):
        while not self._stop.is_set():
            with self._state_lock:
                latest = self._latest_input
            if latest is None:
                self._stop.wait(1e-4)
                continue
            q, qdot, now, ball = latest
            self.replan_now(q, qdot, now, ball)
            self._stop.wait(1e-5)

    def start(self):
        if self.threaded and self._thread is None:
            self._thread = threading.Thread(target=self._thread_body, daemon=True)
            self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    # -- stepping ------------------------------------------------------------

    def latest_snapshot(self) -> Optional[PlanSnapshot]:
        return self._cell.read()

    def step(self, obs: Observation, now: float) -> AgentCommand:
        """One 75 Hz tick: never blocks on the solver."""
        q = obs.joint_history[-1].copy()
        qdot = self._qdot_est
        ball = observation_ball_estimate(obs, now)

        if self.phase == INTERCEPT and ball is not None:
            if self.threaded:
                with self._state_lock:
                    self._latest_input = (q, qdot.copy(), now, ball)
            elif self._tick % self.agent_cfg.replan_every == 0:
                self.replan_now(q, qdot, now, ball)
        self._tick += 1

        snap = self._cell.read()
        if self.phase == INTERCEPT:
            if snap is None:
                cmd = np.zeros(NQ)
            elif now >= snap.t_f:
                self.phase = CRADLE
                self._t_f = snap.t_f
                self._cradle_qdot = qdot.copy()
            else:
                _, qdot_cmd = snap.decode_at(now + self.dt, self.limits)
                cmd = qdot_cmd

        if self.phase == CRADLE:
            if now >= self._t_f + self.cradle_duration:
                self.phase = DONE
            else:
                u = cradle.cradle_step(q, self._cradle_qdot, now, self._t_f,
                                       self.cradle_params, self.limits, self.model)
                cmd = self._cradle_qdot + u * self.dt
                self._cradle_qdot = cmd.copy()

        if self.phase == DONE:
            cmd = np.zeros(NQ)

        cmd = np.clip(cmd, self.limits.qdot_lo, self.limits.qdot_hi)
        self._qdot_est = cmd.copy()
        self._last_cmd = cmd
        return AgentCommand(qdot_cmd=cmd, phase=self.phase)


def _cradle_params(cfg: CradleConfig, ocp: OcpConfig, env_cfg: EnvConfig) -> cradle.CradleParams:
    return cradle.CradleParams(t_s=cfg.slow_down_time, k_v=cfg.k_v,
                               k_omega=cfg.k_omega, v_c=ocp.v_c,
                               control_dt=env_cfg.control_dt)


class BbAgent:
    """Neural-policy agent: one forward pass per tick, no internal state."""

    def __init__(self, arch: PolicyArchitecture, theta: np.ndarray):
        if np.asarray(theta).size != policy.param_count(arch):
            raise policy.ShapeMismatch("theta length does not match architecture")
        self.arch = arch
        self.theta = np.asarray(theta, dtype=float).copy()

    def start(self):
        pass

    def stop(self):
        pass

    def step(self, obs: Observation, now: float) -> AgentCommand:
        cmd = policy.policy_forward(self.arch, self.theta, obs)
        return AgentCommand(qdot_cmd=cmd, phase=INTERCEPT)
