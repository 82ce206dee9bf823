import numpy as np
import pytest

from agilecatch import kinematics as kin
from agilecatch import sqp_solver as sqp
from agilecatch.ballistics import BallParams
from agilecatch.stage_ocp import (CatchSpec, Limits, StageControl, StageState,
                                  decode, fold, path_constraints)

from _oracles import reach_objective_grid
from _toy import ReachTerminal


def reach_problem(target, lam=1000.0, weight=1e6, wide=None):
    limits = wide if wide is not None else Limits(
        qddot_a=np.ones(7), q_lo=-100 * np.ones(7), q_hi=100 * np.ones(7),
        qdot_lo=-50 * np.ones(7), qdot_hi=50 * np.ones(7))
    x0 = StageState(q=np.zeros(7), qdot=np.zeros(7), t=0.0)
    return sqp.StageProblem(x0=x0, limits=limits, lam=lam, n_stages=1,
                            terminal=ReachTerminal(target, weight))


def reach_start():
    return np.r_[np.zeros(7), 1.0]


class TestQpSubproblem:
    def test_unconstrained_newton_step(self):
        H = np.diag([2.0, 4.0])
        c = np.array([-2.0, -8.0])
        d, mu = sqp.qp_subproblem(H, c, np.zeros((0, 2)), np.zeros(0), 10.0)
        assert np.allclose(d, [1.0, 2.0], atol=1e-9)
        assert mu.size == 0

    def test_single_active_constraint_matches_kkt(self):
        # min 1/2 (d1^2 + d2^2) - d1 - d2  s.t. d1 + d2 >= 2... rewritten as
        # A d >= b with the unconstrained optimum (1,1) on the boundary; push
        # the bound to 3 so the constraint binds: analytic solution (1.5,1.5)
        H = np.eye(2)
        c = -np.ones(2)
        A = np.array([[1.0, 1.0]])
        b = np.array([3.0])
        d, mu = sqp.qp_subproblem(H, c, A, b, 10.0)
        assert np.allclose(d, [1.5, 1.5], atol=1e-9)
        assert mu[0] == pytest.approx(0.5, abs=1e-9)

    def test_zero_trust_region_zero_step(self):
        H = np.eye(3)
        c = np.array([1.0, -2.0, 0.5])
        d, _ = sqp.qp_subproblem(H, c, np.zeros((0, 3)), np.zeros(0), 0.0)
        assert np.allclose(d, 0.0, atol=1e-9)

    def test_infeasible_linearization_raises(self):
        # d >= 1 and -d >= 1 cannot hold together
        H = np.eye(1)
        A = np.array([[1.0], [-1.0]])
        b = np.array([1.0, 1.0])
        with pytest.raises(sqp.SubproblemInfeasible):
            sqp.qp_subproblem(H, np.zeros(1), A, b, 10.0)


class TestReachFamily:
    def test_time_dominant_reach_bang_profile(self):
        problem = reach_problem(1.0, lam=1000.0, weight=1e6)
        sol = sqp.solve_stage_problem(problem, reach_start(),
                                      sqp.SqpSettings(max_iterations=120,
                                                      optimality_tolerance=1e-4))
        c = sol.controls[0]
        assert c.dqdot[0] == pytest.approx(np.sqrt(2), abs=2e-2)
        assert c.dt == pytest.approx(np.sqrt(2), abs=2e-2)

    def test_matches_brute_force_on_seeded_targets(self):
        rng = np.random.default_rng(2024)
        lam, weight = 10.0, 1e4
        for _ in range(15):
            target = rng.uniform(0.2, 2.0)
            problem = reach_problem(target, lam=lam, weight=weight)
            sol = sqp.solve_stage_problem(problem, reach_start(),
                                          sqp.SqpSettings(max_iterations=150,
                                                          optimality_tolerance=1e-4))
            ref, _, _ = reach_objective_grid(target, lam, weight, resolution=2e-3)
            assert sol.objective_value <= ref + 1e-2

    def test_deterministic_bitwise(self):
        problem = reach_problem(1.3, lam=10.0, weight=1e4)
        s1 = sqp.solve_stage_problem(problem, reach_start(), sqp.SqpSettings())
        s2 = sqp.solve_stage_problem(problem, reach_start(), sqp.SqpSettings())
        assert s1.objective_value == s2.objective_value
        assert np.array_equal(s1.controls[0].dqdot, s2.controls[0].dqdot)
        assert s1.controls[0].dt == s2.controls[0].dt


def catch_setup(v_horizontal=4.5, yaw_deg=0.0):
    vz = v_horizontal * np.tan(np.radians(49.8778))
    yaw = np.radians(yaw_deg)
    ball = BallParams(p_ref=(0.0, -3.9, 0.05),
                      v_ref=(v_horizontal * np.sin(yaw),
                             v_horizontal * np.cos(yaw), vz), t_ref=0.0)
    from agilecatch.config import READY_Q
    x0 = StageState(q=READY_Q.copy(), qdot=np.zeros(7), t=0.0)
    return ball, x0


class TestCatchSolve:
    def test_solves_and_satisfies_endpoint(self, model, limits):
        ball, x0 = catch_setup()
        spec = CatchSpec(ball=ball)
        sol = sqp.solve(x0, spec, limits, model,
                        settings=sqp.SqpSettings(max_iterations=60,
                                                 optimality_tolerance=1e-5))
        assert sol.status == sqp.SOLVED
        assert sol.final_constraint_violation <= 1e-6
        assert all(c.dt >= 0.0 for c in sol.controls)

    def test_warm_start_is_fixed_point(self, model, limits):
        ball, x0 = catch_setup()
        spec = CatchSpec(ball=ball)
        settings = sqp.SqpSettings(max_iterations=60, optimality_tolerance=1e-5)
        sol = sqp.solve(x0, spec, limits, model, settings=settings)
        re = sqp.solve(x0, spec, limits, model, warm_start=sol.controls,
                       settings=settings)
        assert re.status == sqp.SOLVED
        assert re.iterations <= 2
        assert re.objective_value == pytest.approx(sol.objective_value, abs=1e-8)

    def test_unreachable_ball_reports_infeasible(self, model, limits):
        ball = BallParams(p_ref=(50.0, 50.0, 100.0), v_ref=(10.0, 0.0, 5.0))
        x0 = StageState(q=np.zeros(7), qdot=np.zeros(7), t=0.0)
        sol = sqp.solve(x0, CatchSpec(ball=ball), limits, model,
                        settings=sqp.SqpSettings(max_iterations=60,
                                                 optimality_tolerance=1e-5))
        assert sol.status == sqp.INFEASIBLE

    def test_solved_plan_densely_feasible(self, model, limits):
        ball, x0 = catch_setup(yaw_deg=4.0)
        spec = CatchSpec(ball=ball)
        sol = sqp.solve(x0, spec, limits, model,
                        settings=sqp.SqpSettings(max_iterations=60,
                                                 optimality_tolerance=1e-5))
        assert sol.status == sqp.SOLVED
        horizon = sum(c.dt for c in sol.controls)
        for tau in np.linspace(0, horizon, 1500):
            q, qd = decode(x0, sol.controls, tau, limits)
            assert (q >= limits.q_lo - 1e-4).all() and (q <= limits.q_hi + 1e-4).all()
            assert (qd >= limits.qdot_lo - 1e-4).all() and (qd <= limits.qdot_hi + 1e-4).all()

    def test_merit_nonincreasing_on_accepted_steps(self, model, limits):
        ball, x0 = catch_setup(yaw_deg=-5.0)
        spec = CatchSpec(ball=ball)
        sol = sqp.solve(x0, spec, limits, model,
                        settings=sqp.SqpSettings(max_iterations=60,
                                                 optimality_tolerance=1e-5))
        assert sol.merit_history, "solver recorded no accepted steps"
        for rho, before, after in sol.merit_history:
            assert after <= before + 1e-10 * max(1.0, abs(before))
