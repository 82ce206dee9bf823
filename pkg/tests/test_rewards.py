import numpy as np
import pytest

from agilecatch import rewards
from agilecatch.config import RewardConfig
from agilecatch.rewards import (RewardTerms, catch_reward, constraint_penalty,
                                orientation_reward, position_reward,
                                stability_reward, total_reward)

DT = 1.0 / 75.0


@pytest.fixture
def cfg():
    return RewardConfig()


class TestPositionReward:
    def test_inside_cutoff_scores_full(self, cfg):
        assert position_reward(0.10, cfg) == 1.0

    def test_boundary_scores_full(self, cfg):
        assert position_reward(0.20, cfg) == 1.0

    def test_exponential_beyond_cutoff(self, cfg):
        assert position_reward(0.40, cfg) == pytest.approx(np.exp(-1.0), abs=1e-12)

    def test_nonincreasing_in_distance(self, cfg):
        ds = np.linspace(0, 1.5, 200)
        vals = [position_reward(d, cfg) for d in ds]
        assert (np.diff(vals) <= 1e-15).all()
        assert all(0.0 <= v <= 1.0 for v in vals)


class TestOrientationReward:
    def test_aligned(self):
        assert orientation_reward([0, 1, 0], [0, 1, 0]) == 1.0

    def test_antialigned(self):
        assert orientation_reward([0, 1, 0], [0, -1, 0]) == 0.0

    def test_orthogonal(self):
        assert orientation_reward([1, 0, 0], [0, 1, 0]) == 0.5

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            orientation_reward([0, 2, 0], [0, 1, 0])


class TestStabilityReward:
    def test_slow_and_close_throughout_scores_full(self, cfg):
        n = 60
        r = stability_reward([0.1] * n, [True] * n, DT, cfg)
        assert r == pytest.approx(1.0)

    def test_never_close_scores_zero(self, cfg):
        assert stability_reward([0.1] * 40, [False] * 40, DT, cfg) == 0.0

    def test_fast_ball_approaches_flat_floor(self, cfg):
        n = 60
        r = stability_reward([50.0] * n, [True] * n, DT, cfg)
        assert r == pytest.approx(cfg.stability_flat, abs=1e-9)

    def test_leaving_closeness_forfeits_flat_part(self, cfg):
        n = 60
        close = [True] * 30 + [False] * 30
        r_leave = stability_reward([0.1] * n, close, DT, cfg)
        r_stay = stability_reward([0.1] * n, [True] * n, DT, cfg)
        assert r_stay - r_leave == pytest.approx(cfg.stability_flat, abs=1e-9)

    def test_per_step_score_nonincreasing_in_speed(self, cfg):
        speeds = np.linspace(0, 3, 100)
        n = 60
        vals = [stability_reward([s] * n, [True] * n, DT, cfg) for s in speeds]
        assert (np.diff(vals) <= 1e-12).all()


class TestCatchReward:
    def test_caught(self):
        assert catch_reward(True) == 1.0

    def test_missed(self):
        assert catch_reward(False) == 0.0


class TestConstraintPenalty:
    def test_clean_trajectory_full_score(self, cfg):
        assert constraint_penalty(np.zeros(100), DT, cfg) == 1.0

    def test_saturating_violation_floors_at_zero(self, cfg):
        assert constraint_penalty(np.full(200, 10.0), DT, cfg) == 0.0

    def test_ten_percent_over_for_tenth_second(self, cfg):
        # relative violation 0.1 sustained 0.1 s against budget 0.05 -> 0.8
        steps = int(round(0.1 / DT))
        viol = np.full(steps, 0.1)
        got = constraint_penalty(viol, 0.1 / steps, cfg)
        assert got == pytest.approx(1.0 - (0.1 * 0.1) / 0.05, abs=1e-9)


class TestTotalReward:
    def test_perfect_sim_episode(self, cfg):
        terms = RewardTerms(position=1.0, orientation=1.0, stability=1.0,
                            catch=1.0, constraint=1.0, fault_free=1.0)
        assert total_reward(terms, rewards.SIM, cfg) == pytest.approx(4.0)

    def test_perfect_real_analog_episode(self, cfg):
        terms = RewardTerms(position=1.0, orientation=1.0, stability=1.0,
                            catch=1.0, constraint=1.0, fault_free=1.0)
        assert total_reward(terms, rewards.REAL_ANALOG, cfg) == pytest.approx(3.0)

    def test_all_zero_terms(self, cfg):
        assert total_reward(RewardTerms(), rewards.SIM, cfg) == 0.0
        assert total_reward(RewardTerms(), rewards.REAL_ANALOG, cfg) == 0.0

    def test_terms_bounded_total_bounded(self, cfg):
        rng = np.random.default_rng(5)
        for _ in range(50):
            vals = rng.uniform(0, 1, 6)
            terms = RewardTerms(*vals)
            assert 0.0 <= total_reward(terms, rewards.SIM, cfg) <= 4.0
            assert 0.0 <= total_reward(terms, rewards.REAL_ANALOG, cfg) <= 3.0