import numpy as np
import pytest

from agilecatch import sqp_solver, stage_ocp
from agilecatch.ballistics import BallParams
from agilecatch.stage_ocp import (CatchSpec, CatchTerminal, Limits, OutOfHorizon,
                                  StageControl, StageState, decode,
                                  endpoint_constraints, exact_stage_cost, fold,
                                  objective, path_constraints, stage_transition,
                                  terminal_cost)

from _oracles import integrate_plan, sample_plan


def make_limits(a=2.0):
    return Limits(qddot_a=np.full(7, a), q_lo=-50 * np.ones(7), q_hi=50 * np.ones(7),
                  qdot_lo=-20 * np.ones(7), qdot_hi=20 * np.ones(7))


def state(q=0.0, qdot=0.0, t=0.0):
    return StageState(q=np.full(7, float(q)), qdot=np.full(7, float(qdot)), t=t)


def random_instance(rng, n_stages=1, a_lo=0.5, a_hi=4.0):
    limits = Limits(qddot_a=rng.uniform(a_lo, a_hi, 7),
                    q_lo=-50 * np.ones(7), q_hi=50 * np.ones(7),
                    qdot_lo=-30 * np.ones(7), qdot_hi=30 * np.ones(7))
    x0 = StageState(q=rng.uniform(-1, 1, 7), qdot=rng.uniform(-2, 2, 7),
                    t=rng.uniform(0, 0.5))
    controls = []
    for _ in range(n_stages):
        dt = rng.uniform(0.05, 1.2)
        # keep |dqdot| within the acceleration feasibility envelope
        dqdot = rng.uniform(-1, 1, 7) * limits.qddot_a * dt
        controls.append(StageControl(dqdot=dqdot, dt=dt))
    return x0, controls, limits


class TestStageTransition:
    def test_pure_cruise(self):
        out = stage_transition(state(0.0, 1.0), StageControl(np.zeros(7), 0.5),
                               make_limits(2.0))
        assert np.allclose(out.q, 0.5)
        assert np.allclose(out.qdot, 1.0)
        assert out.t == 0.5

    def test_accelerate_then_cruise_matches_oracle(self):
        lm = make_limits(1.0)
        u = StageControl(np.ones(7), 1.0)
        out = stage_transition(state(0.0, 0.0), u, lm)
        q_ref, qd_ref = integrate_plan(np.zeros(7), np.zeros(7), [u], lm.qddot_a)
        assert np.allclose(out.q, 0.5) and np.allclose(out.qdot, 1.0)
        assert np.allclose(out.q, q_ref, atol=1e-8)
        assert np.allclose(out.qdot, qd_ref, atol=1e-10)

    def test_negative_velocity_change_matches_oracle(self):
        lm = make_limits(2.0)
        u = StageControl(np.full(7, -2.0), 2.0)
        out = stage_transition(state(0.0, 1.0), u, lm)
        q_ref, qd_ref = integrate_plan(np.zeros(7), np.ones(7), [u], lm.qddot_a)
        assert np.allclose(out.q, q_ref, atol=1e-8)
        assert np.allclose(out.qdot, qd_ref, atol=1e-10)

    def test_oracle_agreement_randomized(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            x0, controls, lm = random_instance(rng, n_stages=rng.integers(1, 4))
            end = fold(x0, controls, lm)[-1]
            q_ref, qd_ref = integrate_plan(x0.q, x0.qdot, controls, lm.qddot_a)
            assert np.abs(end.q - q_ref).max() < 1e-8
            assert np.abs(end.qdot - qd_ref).max() < 1e-10


class TestDecode:
    def test_tau_zero_returns_initial_state(self):
        x0 = state(0.3, -0.4)
        q, qd = decode(x0, [StageControl(np.ones(7), 1.0)], 0.0, make_limits())
        assert np.allclose(q, x0.q) and np.allclose(qd, x0.qdot)

    def test_endpoint_matches_fold(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            x0, controls, lm = random_instance(rng, n_stages=2)
            horizon = sum(c.dt for c in controls)
            q, qd = decode(x0, controls, horizon, lm)
            end = fold(x0, controls, lm)[-1]
            assert np.abs(q - end.q).max() < 1e-10
            assert np.abs(qd - end.qdot).max() < 1e-10

    def test_mid_acceleration_matches_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(60):
            x0, controls, lm = random_instance(rng, n_stages=2)
            horizon = sum(c.dt for c in controls)
            tau = rng.uniform(0, horizon)
            q, qd = decode(x0, controls, tau, lm)
            q_ref, qd_ref = sample_plan(x0.q, x0.qdot, controls, lm.qddot_a, tau)
            assert np.abs(q - q_ref).max() < 1e-8
            assert np.abs(qd - qd_ref).max() < 1e-8

    def test_out_of_horizon_rejected(self):
        with pytest.raises(OutOfHorizon):
            decode(state(), [StageControl(np.zeros(7), 0.5)], 0.6, make_limits())

    def test_velocity_continuous_and_piecewise_linear(self):
        lm = make_limits(2.0)
        x0 = state(0.0, 1.0)
        controls = [StageControl(np.full(7, -2.0), 1.5),
                    StageControl(np.full(7, 1.0), 1.0)]
        taus = np.linspace(0, 2.5, 400)
        qd = np.array([decode(x0, controls, t, lm)[1][0] for t in taus])
        assert np.abs(np.diff(qd)).max() < 2.0 * (taus[1] - taus[0]) + 1e-9


class TestObjectiveAndCosts:
    def make_catch(self, w_p=10.0, w_v=1.0, lam=10.0):
        ball = BallParams(p_ref=(0, -3.9, 0.05), v_ref=(0, 4.5, 5.34), t_ref=0.0)
        return CatchSpec(ball=ball, w_p=w_p, w_v=w_v, lam=lam)

    def test_zero_controls_zero_weight_objective(self, model):
        spec = self.make_catch(w_p=0.0, w_v=0.0, lam=10.0)
        x0 = state()
        val = objective(x0, [StageControl(np.zeros(7), 0.0)], spec, model)
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_single_stage_running_cost_arithmetic(self, model):
        spec = self.make_catch(w_p=0.0, w_v=0.0, lam=2.0)
        u = StageControl(np.r_[1.0, np.zeros(6)], 1.0)
        val = objective(state(), [u], spec, model)
        assert val == pytest.approx(3.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self, model):
        rng = np.random.default_rng(9)
        lm = make_limits(4.0)
        spec = self.make_catch()
        problem = sqp_solver.StageProblem(
            x0=StageState(q=rng.uniform(-0.5, 0.5, 7), qdot=rng.uniform(-1, 1, 7), t=0.0),
            limits=lm, lam=spec.lam, n_stages=1,
            terminal=CatchTerminal(spec, model))
        for _ in range(5):
            u = np.r_[rng.uniform(-0.8, 0.8, 7), rng.uniform(0.4, 1.0)]
            grad = sqp_solver.objective_gradient(problem, u)
            h = 1e-6
            fd = np.zeros_like(u)
            for j in range(8):
                up, um = u.copy(), u.copy()
                up[j] += h
                um[j] -= h
                fd[j] = (sqp_solver.objective_value(problem, up)
                         - sqp_solver.objective_value(problem, um)) / (2 * h)
            denom = max(1.0, np.abs(fd).max())
            assert np.abs(grad - fd).max() / denom < 1e-5


class TestTerminalCost:
    def test_perfect_catch_state_scores_zero(self, model):
        # ball arriving exactly at the home net along the net normal, with
        # the head moving at v_c along the same axis
        from agilecatch import kinematics as kin
        q = np.zeros(7)
        pose, J = kin.fk_with_jacobian(model, q)
        v_ball = pose.net_normal * 6.0
        t_f = 0.4
        g = np.array([0, 0, -9.81])
        v_ref = v_ball - g * t_f
        p_ref = pose.p - v_ref * t_f - 0.5 * g * t_f ** 2
        ball = BallParams(p_ref=p_ref, v_ref=v_ref, t_ref=0.0)
        spec = CatchSpec(ball=ball, v_c=1.0, w_p=5.0, w_v=3.0)
        qdot = np.linalg.lstsq(J, np.r_[pose.net_normal * 1.0, np.zeros(3)],
                               rcond=None)[0]
        x_N = StageState(q=q, qdot=qdot, t=t_f)
        assert terminal_cost(x_N, spec, model) == pytest.approx(0.0, abs=1e-9)

    def test_zero_weights_zero_cost(self, model):
        spec = CatchSpec(ball=BallParams((0, -3, 1), (0, 4, 2)), w_p=0.0, w_v=0.0)
        assert terminal_cost(state(0.5, 1.0, t=0.3), spec, model) == 0.0

    def test_stationary_head_pays_catch_speed(self, model):
        # net normal aligned with ball velocity, net at ball position,
        # stationary head: residual is exactly v_c^2 * w_v
        from agilecatch import kinematics as kin
        pose = kin.fk(model, np.zeros(7))
        v_dir = pose.net_normal
        t_f = 0.0
        ball = BallParams(p_ref=pose.p, v_ref=v_dir * 6.0, t_ref=0.0)
        spec = CatchSpec(ball=ball, v_c=1.5, w_p=0.0, w_v=1.0)
        x_N = StageState(q=np.zeros(7), qdot=np.zeros(7), t=t_f)
        assert terminal_cost(x_N, spec, model) == pytest.approx(2.25, abs=1e-9)

    def test_degenerate_ball_velocity_rejected(self, model):
        ball = BallParams(p_ref=(0, 0, 1), v_ref=(0, 0, 9.81 * 0.5), t_ref=0.0)
        spec = CatchSpec(ball=ball)
        with pytest.raises(stage_ocp.DegenerateVelocity):
            terminal_cost(state(t=0.5), spec, model)  # velocity crosses zero at apex


class TestEndpointConstraints:
    def test_perfect_pose_strictly_feasible(self, model):
        from agilecatch import kinematics as kin
        pose = kin.fk(model, np.zeros(7))
        ball = BallParams(p_ref=pose.p, v_ref=pose.net_normal * 5.0, t_ref=0.0)
        spec = CatchSpec(ball=ball, eps_p=0.05, eps_r=0.35)
        c = endpoint_constraints(state(), spec, model)
        assert c[0] == pytest.approx(0.05, abs=1e-9)
        assert c[1] == pytest.approx(1 - np.cos(0.35), abs=1e-9)
        assert (c > 0).all()

    def test_net_one_meter_away_violates_position(self, model):
        from agilecatch import kinematics as kin
        pose = kin.fk(model, np.zeros(7))
        ball = BallParams(p_ref=pose.p + np.array([0, 0, 1.0]),
                          v_ref=pose.net_normal * 5.0, t_ref=0.0)
        c = endpoint_constraints(state(), CatchSpec(ball=ball, eps_p=0.05), model)
        assert c[0] == pytest.approx(0.05 - 1.0, abs=1e-9)

    def test_perpendicular_alignment_residual(self, model):
        from agilecatch import kinematics as kin
        pose = kin.fk(model, np.zeros(7))
        perp = np.array([1.0, 0, 0])  # net normal is +y at home
        ball = BallParams(p_ref=pose.p, v_ref=perp * 5.0, t_ref=0.0)
        c = endpoint_constraints(state(), CatchSpec(ball=ball, eps_r=np.pi / 3), model)
        assert c[1] == pytest.approx(-0.5, abs=1e-9)


class TestPathConstraints:
    def test_reversal_includes_extremum_value(self):
        lm = make_limits(2.0)
        x0 = state(0.0, 1.0)
        u = StageControl(np.full(7, -2.0), 2.0)
        res = path_constraints(x0, [u], lm)
        # extremum at q + qdot^2/(2a) = 0.25; residual rows are hi-q_hat and
        # q_hat-lo for each of the 7 joints
        assert res.size == 7 + 14 * 2 + 14 * 2 + 14
        assert np.isclose(res[-14], 50 - 0.25)
        assert np.isclose(res[-13], 0.25 - (-50))
        # dense sampling confirms the in-stage maximum
        taus = np.linspace(0, 2.0, 4001)
        qs = np.array([decode(x0, [u], t, lm)[0][0] for t in taus])
        assert qs.max() == pytest.approx(0.25, abs=1e-6)

    def test_same_sign_stage_has_no_extremum_rows(self):
        lm = make_limits(2.0)
        res = path_constraints(state(0.0, 1.0), [StageControl(np.ones(7), 1.0)], lm)
        assert res.size == 7 + 14 * 2 + 14 * 2  # no extremum block entries

    def test_interior_zero_controls_strictly_feasible(self):
        lm = make_limits()
        res = path_constraints(state(0.1, 0.2), [StageControl(np.zeros(7), 0.4)], lm)
        assert (res > 0).all()

    def test_feasible_plan_dense_sampling_within_boxes(self):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 40:
            x0, controls, lm = random_instance(rng, n_stages=2)
            lm = Limits(qddot_a=lm.qddot_a, q_lo=-3 * np.ones(7), q_hi=3 * np.ones(7),
                        qdot_lo=-6 * np.ones(7), qdot_hi=6 * np.ones(7))
            x0 = StageState(q=np.clip(x0.q, -1, 1), qdot=np.clip(x0.qdot, -2, 2), t=0.0)
            if (path_constraints(x0, controls, lm) < 0).any():
                continue
            checked += 1
            horizon = sum(c.dt for c in controls)
            for tau in np.linspace(0, horizon, 997):
                q, qd = decode(x0, controls, tau, lm)
                assert (q >= lm.q_lo - 1e-6).all() and (q <= lm.q_hi + 1e-6).all()
                assert (qd >= lm.qdot_lo - 1e-6).all() and (qd <= lm.qdot_hi + 1e-6).all()


class TestExactStageCost:
    def test_zero_velocity_change(self):
        lm = make_limits(2.0)
        assert exact_stage_cost(StageControl(np.zeros(7), 0.7), lm, 3.0) == \
            pytest.approx(2.1)

    def test_hand_arithmetic(self):
        lm = Limits(qddot_a=np.r_[2.0, np.ones(6)], q_lo=-5 * np.ones(7),
                    q_hi=5 * np.ones(7), qdot_lo=-5 * np.ones(7), qdot_hi=5 * np.ones(7))
        u = StageControl(np.r_[1.0, np.zeros(6)], 1.0)
        assert exact_stage_cost(u, lm, 1.0) == pytest.approx(3.0)

    def test_sign_symmetric(self):
        lm = make_limits(1.7)
        rng = np.random.default_rng(8)
        d = rng.uniform(-2, 2, 7)
        a = exact_stage_cost(StageControl(d, 0.9), lm, 2.0)
        b = exact_stage_cost(StageControl(-d, 0.9), lm, 2.0)
        assert a == pytest.approx(b, abs=1e-12)
