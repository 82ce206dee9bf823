"""Shooting-based SQP solver for the stage catching problem.

Each iteration linearizes the rolled-out objective and constraints at the
current control vector, solves a small dense inequality-constrained QP
(Gauss-Newton Hessian, trust-region box), and globalizes with a backtracking
line search on an l1 exact-penalty merit function. Stage durations are hard
bounds in every subproblem, so returned plans satisfy dt >= 0 exactly.

Everything is deterministic: identical inputs produce identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import ballistics, stage_ocp
from .kinematics import KinematicModel, fk
from .stage_ocp import (NQ, NU, NX, CatchSpec, CatchTerminal, Limits, StageControl,
                        StageState, TerminalEval, rollout_with_sensitivity)

GATE_INACTIVE = 1.0e6  # residual filler for extremum rows whose case is off

SOLVED = "solved"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"


class SubproblemInfeasible(RuntimeError):
    """The linearized constraint system has no solution inside the trust box."""


@dataclass(frozen=True)
class SqpSettings:
    max_iterations: int = 40
    constraint_tolerance: float = 1e-6
    optimality_tolerance: float = 1e-6
    merit_penalty: float = 10.0
    trust_region_radius: float = 2.0
    ls_backtrack_factor: float = 0.5
    ls_max_steps: int = 25

    def __post_init__(self):
        if min(self.max_iterations, self.constraint_tolerance, self.optimality_tolerance,
               self.merit_penalty, self.trust_region_radius, self.ls_backtrack_factor,
               self.ls_max_steps) <= 0:
            raise ValueError("all solver settings must be positive")
        if self.ls_backtrack_factor >= 1.0:
            raise ValueError("backtrack factor must be in (0, 1)")


@dataclass
class SqpSolution:
    controls: List[StageControl]
    status: str
    iterations: int
    final_constraint_violation: float
    objective_value: float
    kkt_residual: float = np.inf
    # one (penalty, merit before, merit after) triple per accepted step
    merit_history: List[Tuple[float, float, float]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Dense active-set QP
# ---------------------------------------------------------------------------

def _active_set_qp(H: np.ndarray, c: np.ndarray, A: np.ndarray, b: np.ndarray,
                   x0: np.ndarray, max_iter: int = 400) -> Tuple[np.ndarray, np.ndarray]:
    """Primal active-set solve of min 1/2 x'Hx + c'x s.t. Ax >= b.

    ``x0`` must be feasible. Returns (x, multipliers); multipliers are zero on
    inactive rows. H must be positive definite.
    """
    n = H.shape[0]
    m = A.shape[0] if A.size else 0
    x = x0.astype(float).copy()
    active: List[int] = []
    lam_full = np.zeros(m)

    for _ in range(max_iter):
        g = H @ x + c
        if active:
            Aw = A[active]
            k = len(active)
            KKT = np.block([[H, -Aw.T], [Aw, np.zeros((k, k))]])
            rhs = np.concatenate([-g, np.zeros(k)])
            try:
                sol = np.linalg.solve(KKT, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
            p = sol[:n]
            mu = sol[n:]
        else:
            p = np.linalg.solve(H, -g)
            mu = np.zeros(0)

        if np.max(np.abs(p)) <= 1e-11:
            if mu.size and mu.min() < -1e-9:
                drop = active[int(np.argmin(mu))]
                active.remove(drop)
                continue
            lam_full[:] = 0.0
            for idx, row in enumerate(active):
                lam_full[row] = max(mu[idx], 0.0)
            return x, lam_full

        # step length to the nearest blocking constraint
        alpha = 1.0
        blocker = -1
        if m:
            Ap = A @ p
            resid = A @ x - b
            for i in range(m):
                if i in active or Ap[i] >= -1e-13:
                    continue
                ai = max(resid[i], 0.0) / (-Ap[i])
                if ai < alpha - 1e-15:
                    alpha = ai
                    blocker = i
        x = x + alpha * p
        if blocker >= 0:
            active.append(blocker)

    # iteration guard: return the current (feasible) point
    lam_full[:] = 0.0
    for idx, row in enumerate(active):
        if idx < mu.size:
            lam_full[row] = max(mu[idx], 0.0)
    return x, lam_full


def qp_subproblem(H: np.ndarray, c: np.ndarray, A: np.ndarray, b: np.ndarray,
                  trust_radius: float) -> Tuple[np.ndarray, np.ndarray]:
    """QP step for the linearized problem: min 1/2 d'Hd + c'd, A d >= b, |d|_inf <= r.

    Returns (d, multipliers-for-A-rows). Raises SubproblemInfeasible when the
    linearized system has no point inside the trust box.
    """
    n = H.shape[0]
    m = A.shape[0] if A.size else 0
    eye = np.eye(n)
    A_full = np.vstack([A, eye, -eye]) if m else np.vstack([eye, -eye])
    b_full = np.concatenate([b, -np.full(n, trust_radius), -np.full(n, trust_radius)]) \
        if m else np.concatenate([-np.full(n, trust_radius), -np.full(n, trust_radius)])

    if m and np.any(b > 1e-12):
        d0 = _phase_one(A_full, b_full, n)
        if d0 is None:
            raise SubproblemInfeasible("no feasible point for the linearized constraints")
    else:
        d0 = np.zeros(n)

    H_reg = H + 1e-10 * eye
    d, lam = _active_set_qp(H_reg, c, A_full, b_full, d0)
    return d, lam[:m]


def _phase_one(A_full: np.ndarray, b_full: np.ndarray, n: int) -> Optional[np.ndarray]:
    """Min-slack feasibility solve; None when infeasibility persists."""
    m = A_full.shape[0]
    viol = np.maximum(b_full, 0.0)
    need = np.flatnonzero(viol > 0.0)
    ns = need.size
    H = np.diag(np.concatenate([np.full(n, 1e-6), np.full(ns, 1e-6)]))
    c = np.concatenate([np.zeros(n), np.ones(ns)])
    S = np.zeros((m, ns))
    for j, row in enumerate(need):
        S[row, j] = 1.0
    A_aug = np.block([[A_full, S], [np.zeros((ns, n)), np.eye(ns)]])
    b_aug = np.concatenate([b_full, np.zeros(ns)])
    z0 = np.concatenate([np.zeros(n), viol[need]])
    z, _ = _active_set_qp(H, c, A_aug, b_aug, z0)
    if z[n:].sum() > 1e-7:
        return None
    return z[:n]


def _elastic_qp(H: np.ndarray, c: np.ndarray, A: np.ndarray, b: np.ndarray,
                trust_radius: float, rho: float) -> Tuple[np.ndarray, np.ndarray]:
    """Always-feasible QP with l1-penalized slacks on violated rows."""
    n = H.shape[0]
    m = A.shape[0]
    eye = np.eye(n)
    viol = np.maximum(b, 0.0)
    need = np.flatnonzero(viol > 1e-12)
    ns = need.size
    S = np.zeros((m, ns))
    for j, row in enumerate(need):
        S[row, j] = 1.0
    A_aug = np.block([
        [A, S],
        [eye, np.zeros((n, ns))],
        [-eye, np.zeros((n, ns))],
        [np.zeros((ns, n)), np.eye(ns)],
    ])
    b_aug = np.concatenate([b, -np.full(n, trust_radius), -np.full(n, trust_radius),
                            np.zeros(ns)])
    H_aug = np.zeros((n + ns, n + ns))
    H_aug[:n, :n] = H + 1e-10 * eye
    H_aug[n:, n:] = 1e-6 * np.eye(ns)
    c_aug = np.concatenate([c, np.full(ns, rho)])
    z0 = np.concatenate([np.zeros(n), viol[need]])
    z, lam = _active_set_qp(H_aug, c_aug, A_aug, b_aug, z0)
    return z[:n], lam[:m]


# ---------------------------------------------------------------------------
# Stage problem assembly
# ---------------------------------------------------------------------------

@dataclass
class StageProblem:
    """A shooting problem over N stages with a pluggable terminal model.

    ``terminal`` maps a StageState to a TerminalEval; its c_ineq rows become
    hard endpoint constraints.
    """

    x0: StageState
    limits: Limits
    lam: float
    n_stages: int
    terminal: object  # .evaluate(StageState) -> TerminalEval

    def unflatten(self, u: np.ndarray) -> List[StageControl]:
        controls = []
        for k in range(self.n_stages):
            blk = u[NU * k:NU * (k + 1)]
            controls.append(StageControl(dqdot=blk[:NQ], dt=max(0.0, float(blk[NQ]))))
        return controls

    @staticmethod
    def flatten(controls: Sequence[StageControl]) -> np.ndarray:
        return np.concatenate([np.concatenate([c.dqdot, [c.dt]]) for c in controls])


def _constraint_rows(problem: StageProblem, controls: List[StageControl],
                     states: List[stage_ocp.StageState],
                     sens: Optional[List[np.ndarray]],
                     term: TerminalEval,
                     X_N: Optional[np.ndarray]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Constraint values g (>= 0 feasible) and, when sensitivities are given,
    the Jacobian G. Fixed row layout: acceleration block, velocity block,
    position block, gated extremum block, endpoint block, dt bounds."""
    lm = problem.limits
    n = problem.n_stages
    nu_tot = NU * n
    want_jac = sens is not None
    vals: List[np.ndarray] = []
    jacs: List[np.ndarray] = []

    def emit(v: np.ndarray, J: Optional[np.ndarray]):
        vals.append(v)
        if want_jac:
            jacs.append(J if J is not None else np.zeros((v.size, nu_tot)))

    for k, u in enumerate(controls):
        v = lm.qddot_a * u.dt - np.abs(u.dqdot)
        J = None
        if want_jac:
            J = np.zeros((NQ, nu_tot))
            base = NU * k
            J[:, base:base + NQ] = -np.diag(np.sign(u.dqdot))
            J[:, base + NQ] = lm.qddot_a
        emit(v, J)

    for k in range(1, n + 1):
        s = states[k]
        Xq = sens[k][:NQ] if want_jac else None
        Xv = sens[k][NQ:2 * NQ] if want_jac else None
        emit(s.qdot - lm.qdot_lo, Xv)
        emit(lm.qdot_hi - s.qdot, -Xv if want_jac else None)
        emit(s.q - lm.q_lo, Xq)
        emit(lm.q_hi - s.q, -Xq if want_jac else None)

    for k, u in enumerate(controls):
        s = states[k]
        gate = s.qdot * (s.qdot + u.dqdot) < 0.0
        v = np.full(2 * NQ, GATE_INACTIVE)
        J = np.zeros((2 * NQ, nu_tot)) if want_jac else None
        for i in range(NQ):
            if not gate[i]:
                continue
            q_hat = stage_ocp.stage_extremum(s.q[i], s.qdot[i], lm.qddot_a[i])
            v[2 * i] = lm.q_hi[i] - q_hat
            v[2 * i + 1] = q_hat - lm.q_lo[i]
            if want_jac:
                dqhat = sens[k][i] + (np.abs(s.qdot[i]) / lm.qddot_a[i]) * sens[k][NQ + i]
                J[2 * i] = -dqhat
                J[2 * i + 1] = dqhat
        emit(v, J)

    if term.c_ineq.size:
        emit(term.c_ineq, term.J_ineq @ X_N if want_jac else None)

    dt_vals = np.array([u.dt for u in controls])
    if want_jac:
        J = np.zeros((n, nu_tot))
        for k in range(n):
            J[k, NU * k + NQ] = 1.0
        emit(dt_vals, J)
    else:
        emit(dt_vals, None)

    g = np.concatenate(vals)
    return (g, np.vstack(jacs)) if want_jac else (g, None)


def _eval_cheap(problem: StageProblem, u: np.ndarray) -> Tuple[float, np.ndarray]:
    controls = problem.unflatten(u)
    states = stage_ocp.fold(problem.x0, controls, problem.limits)
    term = problem.terminal.evaluate(states[-1], with_jac=False)
    f = term.cost() + sum(problem.lam * c.dt + float(c.dqdot @ c.dqdot) for c in controls)
    g, _ = _constraint_rows(problem, controls, states, None, term, None)
    return f, g


def _eval_full(problem: StageProblem, u: np.ndarray):
    """Objective, gradient, Gauss-Newton Hessian, constraints, and their
    Jacobian, all at flattened controls ``u``."""
    controls = problem.unflatten(u)
    states, sens = rollout_with_sensitivity(problem.x0, controls, problem.limits)
    X_N = sens[-1]
    term = problem.terminal.evaluate(states[-1])

    f = term.cost() + sum(problem.lam * c.dt + float(c.dqdot @ c.dqdot) for c in controls)
    grad = term.cost_gradient() @ X_N
    Ju = term.J_sq @ X_N
    H = 2.0 * Ju.T @ np.diag(term.w_sq) @ Ju
    for k, c in enumerate(controls):
        base = NU * k
        grad[base:base + NQ] += 2.0 * c.dqdot
        grad[base + NQ] += problem.lam
        H[base:base + NQ, base:base + NQ] += 2.0 * np.eye(NQ)
    H += 1e-8 * np.eye(H.shape[0])

    g, G = _constraint_rows(problem, controls, states, sens, term, X_N)
    return f, grad, H, g, G


def objective_gradient(problem: StageProblem, u: np.ndarray) -> np.ndarray:
    """Analytic gradient of the stage objective at flattened controls ``u``."""
    return _eval_full(problem, u)[1]


def objective_value(problem: StageProblem, u: np.ndarray) -> float:
    return _eval_cheap(problem, u)[0]


def _violation(g: np.ndarray) -> float:
    return float(np.maximum(-g, 0.0).max(initial=0.0))


def _merit(f: float, g: np.ndarray, rho: float) -> float:
    return f + rho * float(np.maximum(-g, 0.0).sum())


# ---------------------------------------------------------------------------
# Main SQP loop
# ---------------------------------------------------------------------------

def solve_stage_problem(problem: StageProblem, u0: np.ndarray,
                        settings: SqpSettings) -> SqpSolution:
    """SQP iteration on a generic stage problem from flattened controls u0."""
    u = u0.astype(float).copy()
    rho = settings.merit_penalty
    best_u = u.copy()
    best_key = (np.inf, np.inf)
    status = MAX_ITERATIONS
    kkt = np.inf
    iterations = 0
    f = np.inf
    viol = np.inf
    merit_history: List[Tuple[float, float, float]] = []

    for it in range(settings.max_iterations):
        iterations = it + 1
        f, grad, H, g, G = _eval_full(problem, u)
        viol = _violation(g)
        key = (viol if viol > settings.constraint_tolerance else 0.0, f)
        if key < best_key:
            best_key = key
            best_u = u.copy()

        try:
            d, mu = qp_subproblem(H=H, c=grad, A=G, b=-g,
                                  trust_radius=settings.trust_region_radius)
        except SubproblemInfeasible:
            d, mu = _elastic_qp(H, grad, G, -g,
                                settings.trust_region_radius, rho * 10.0)

        kkt = float(np.max(np.abs(grad - G.T @ mu))) if mu.size else float(np.max(np.abs(grad)))
        if viol <= settings.constraint_tolerance and kkt <= settings.optimality_tolerance:
            status = SOLVED
            break

        step_norm = float(np.max(np.abs(d)))
        if step_norm <= 1e-11:
            if viol > 100.0 * settings.constraint_tolerance:
                status = INFEASIBLE
            break

        rho = max(rho, 1.5 * float(mu.max(initial=0.0)))
        phi0 = _merit(f, g, rho)
        descent = float(grad @ d) - rho * float(np.maximum(-g, 0.0).sum())
        alpha = 1.0
        accepted = False
        for _ in range(settings.ls_max_steps):
            f_t, g_t = _eval_cheap(problem, u + alpha * d)
            phi_t = _merit(f_t, g_t, rho)
            if phi_t <= phi0 + 1e-4 * alpha * min(descent, 0.0):
                accepted = True
                break
            alpha *= settings.ls_backtrack_factor
        if not accepted:
            # the merit model cannot make progress; a stall while clearly
            # violated means the restoration itself has stalled
            if viol > 100.0 * settings.constraint_tolerance:
                status = INFEASIBLE
            break
        merit_history.append((rho, phi0, phi_t))
        u = u + alpha * d

    f_end, g_end = _eval_cheap(problem, u)
    if status != SOLVED:
        f_best, g_best = _eval_cheap(problem, best_u)
        if (_violation(g_best), f_best) < (_violation(g_end), f_end):
            u, f_end, g_end = best_u, f_best, g_best
    controls = problem.unflatten(u)
    return SqpSolution(
        controls=controls,
        status=status,
        iterations=iterations,
        final_constraint_violation=_violation(g_end),
        objective_value=f_end,
        kkt_residual=kkt,
        merit_history=merit_history,
    )


def initial_controls(x0: StageState, spec: CatchSpec, model: KinematicModel,
                     n_stages: int) -> List[StageControl]:
    """Cold-start guess: zero velocity change, duration from the ball's
    predicted crossing of the net's current y-plane."""
    plane_y = fk(model, x0.q).p[1]
    t_plane = ballistics.time_at_plane_or_none(spec.ball, plane_y)
    horizon = 0.5 if t_plane is None else max(t_plane - x0.t, 0.05)
    per_stage = horizon / n_stages
    return [StageControl(dqdot=np.zeros(NQ), dt=per_stage) for _ in range(n_stages)]


def solve(x0: StageState, spec: CatchSpec, limits: Limits, model: KinematicModel,
          warm_start: Optional[Sequence[StageControl]] = None,
          settings: Optional[SqpSettings] = None,
          n_stages: int = 1) -> SqpSolution:
    """Solve the catching problem from state ``x0`` for the ball in ``spec``."""
    settings = settings or SqpSettings()
    if warm_start is not None:
        controls = list(warm_start)
        n_stages = len(controls)
    else:
        controls = initial_controls(x0, spec, model, n_stages)
    problem = StageProblem(x0=x0, limits=limits, lam=spec.lam, n_stages=n_stages,
                           terminal=CatchTerminal(spec, model))
    return solve_stage_problem(problem, StageProblem.flatten(controls), settings)
