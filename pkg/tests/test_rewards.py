"""Reward algebra: hand-computed values, telescoping, clipping bounds."""

import numpy as np
import pytest

from gaitspeed.errors import ConfigError
from gaitspeed.rewards import (
    RewardConfig,
    RewardInputs,
    auxiliary_reward,
    clip_from_target_speed,
    clipped_reward,
    dense_reward,
    goal_bonus,
    mixed_reward,
    step_reward_batch,
)


def make_inputs(theta_prev=0.0, theta_t=0.0, dx_prev=0.0, dx_t=0.0,
                q_off=0.0, in_goal=False):
    q0 = np.zeros(12)
    return RewardInputs(theta_prev, theta_t, dx_prev, dx_t,
                        q0 + q_off, q0, in_goal)


class TestGoalBonus:
    def test_inside_threshold_pays(self):
        cfg = RewardConfig()
        assert goal_bonus(make_inputs(theta_t=0.3, in_goal=True), cfg) == pytest.approx(0.03, abs=1e-15)

    def test_boundary_is_strict(self):
        # in_goal is defined by theta < threshold, so 0.4 exactly pays nothing
        cfg = RewardConfig()
        assert goal_bonus(make_inputs(theta_t=0.4, in_goal=False), cfg) == 0.0

    def test_episode_sum_counts_in_goal_steps(self):
        cfg = RewardConfig()
        rng = np.random.default_rng(0)
        flags = rng.uniform(size=200) < 0.3
        total = sum(goal_bonus(make_inputs(in_goal=bool(f)), cfg) for f in flags)
        assert total == pytest.approx(0.03 * flags.sum(), abs=1e-12)


class TestAuxiliary:
    def test_static_is_zero(self):
        cfg = RewardConfig()
        assert auxiliary_reward(make_inputs(), cfg) == 0.0

    def test_hand_computed_value(self):
        cfg = RewardConfig()
        r = auxiliary_reward(make_inputs(dx_prev=0.01, dx_t=0.02, q_off=0.5), cfg)
        assert r == pytest.approx(-0.11125, abs=1e-12)

    def test_posture_penalty_is_even(self):
        cfg = RewardConfig()
        a = auxiliary_reward(make_inputs(q_off=0.37), cfg)
        b = auxiliary_reward(make_inputs(q_off=-0.37), cfg)
        assert a == pytest.approx(b, abs=1e-15)


class TestDense:
    def test_hand_computed_value(self):
        cfg = RewardConfig()
        r = dense_reward(make_inputs(theta_prev=1.0, theta_t=0.8,
                                     dx_prev=0.01, dx_t=0.02, q_off=0.5), cfg)
        assert r == pytest.approx(0.08875, abs=1e-12)

    def test_static_zero(self):
        assert dense_reward(make_inputs(), RewardConfig()) == 0.0

    def test_angle_term_telescopes(self):
        cfg = RewardConfig(lambda_x=0.0, lambda_q=0.0)
        rng = np.random.default_rng(1)
        thetas = np.abs(rng.normal(1.5, 0.5, 60))
        total = sum(dense_reward(make_inputs(theta_prev=thetas[i - 1], theta_t=thetas[i]), cfg)
                    for i in range(1, len(thetas)))
        assert total == pytest.approx(thetas[0] - thetas[-1], abs=1e-10)

    def test_full_telescoping_identity(self):
        # sum of dense rewards over a trajectory reduces to boundary terms
        # plus the accumulated posture penalty, exactly
        cfg = RewardConfig()
        rng = np.random.default_rng(2)
        n = 120
        thetas = np.abs(rng.normal(1.5, 0.4, n + 1))
        dxs = np.abs(rng.normal(0.01, 0.005, n + 1))
        qs = rng.normal(0.0, 0.4, (n + 1, 12))
        q0 = np.zeros(12)
        total = 0.0
        for i in range(1, n + 1):
            total += dense_reward(RewardInputs(thetas[i - 1], thetas[i], dxs[i - 1],
                                               dxs[i], qs[i], q0, False), cfg)
        expected = (thetas[0] - thetas[-1]) + 8.0 * (dxs[0] - dxs[-1]) \
            - (1 / 24) * sum(np.sum(qs[i] ** 4) for i in range(1, n + 1))
        assert total == pytest.approx(expected, abs=1e-10)


class TestMixed:
    def test_sparse_configuration(self):
        cfg = RewardConfig(lambda_dense=0.0, lambda_bonus=1.0)
        r = mixed_reward(make_inputs(theta_prev=1.0, theta_t=0.2, in_goal=True), cfg)
        assert r == pytest.approx(0.03, abs=1e-15)

    def test_dense_plus_bonus(self):
        cfg = RewardConfig(lambda_dense=1.0, lambda_bonus=3.0)
        r = mixed_reward(make_inputs(theta_prev=1.0, theta_t=0.8,
                                     dx_prev=0.01, dx_t=0.02, q_off=0.5), cfg)
        assert r == pytest.approx(0.08875, abs=1e-12)

    def test_strong_bonus_static_in_goal(self):
        cfg = RewardConfig(lambda_dense=1.0, lambda_bonus=10.0)
        r = mixed_reward(make_inputs(in_goal=True), cfg)
        assert r == pytest.approx(0.3, abs=1e-12)


class TestClipped:
    def test_fast_progress_capped(self):
        cfg = RewardConfig(mode="clipped", theta_clip=0.1, lambda_bonus=0.0)
        r = clipped_reward(make_inputs(theta_prev=1.0, theta_t=0.8), cfg)
        assert r == pytest.approx(0.1, abs=1e-15)

    def test_regression_charged_in_full(self):
        cfg = RewardConfig(mode="clipped", theta_clip=0.1, lambda_bonus=0.0)
        r = clipped_reward(make_inputs(theta_prev=0.8, theta_t=1.0), cfg)
        assert r == pytest.approx(-0.2, abs=1e-15)

    def test_slow_progress_unclipped(self):
        cfg = RewardConfig(mode="clipped", theta_clip=0.1, lambda_bonus=0.0)
        r = clipped_reward(make_inputs(theta_prev=1.0, theta_t=0.95), cfg)
        assert r == pytest.approx(0.05, abs=1e-15)

    def test_never_exceeds_dense_on_progress(self):
        cfg_c = RewardConfig(mode="clipped", theta_clip=0.07, lambda_bonus=0.0)
        cfg_d = RewardConfig()
        rng = np.random.default_rng(3)
        for _ in range(500):
            prev = rng.uniform(0, np.pi)
            cur = prev - rng.uniform(0, 0.3)
            ic = make_inputs(theta_prev=prev, theta_t=cur)
            rc = clipped_reward(ic, cfg_c)
            rd = dense_reward(ic, cfg_d)
            assert rc <= rd + 1e-15
            if prev - cur <= 0.07:
                assert rc == pytest.approx(rd, abs=1e-15)

    def test_segment_angle_return_bounded(self):
        # angle term of the clipped reward can never exceed clip * length
        cfg = RewardConfig(mode="clipped", theta_clip=0.05, lambda_bonus=0.0,
                           lambda_x=0.0, lambda_q=0.0)
        rng = np.random.default_rng(4)
        for _ in range(10_000 // 50):
            thetas = np.abs(rng.normal(1.5, 0.6, 51))
            total = sum(clipped_reward(make_inputs(theta_prev=thetas[i - 1],
                                                   theta_t=thetas[i]), cfg)
                        for i in range(1, 51))
            assert total <= 0.05 * 50 + 1e-12


class TestClipFromSpeed:
    def test_values(self):
        assert clip_from_target_speed(1.5, 20.0) == pytest.approx(0.075, abs=1e-15)
        assert clip_from_target_speed(0.75, 20.0) == pytest.approx(0.0375, abs=1e-15)

    def test_linear_in_speed(self):
        a = clip_from_target_speed(0.6, 20.0)
        b = clip_from_target_speed(1.2, 20.0)
        assert b == pytest.approx(2 * a, abs=1e-15)

    def test_rejects_nonpositive(self):
        with pytest.raises(ConfigError):
            clip_from_target_speed(0.0, 20.0)


class TestConfigValidation:
    def test_clipped_excludes_bonus(self):
        with pytest.raises(ConfigError):
            RewardConfig(mode="clipped", theta_clip=0.1, lambda_bonus=1.0).validate()

    def test_negative_coefficient_rejected(self):
        with pytest.raises(ConfigError):
            RewardConfig(lambda_x=-1.0).validate()

    def test_bonus_values_exact(self):
        cfg = RewardConfig()
        for ig in (True, False):
            r = goal_bonus(make_inputs(in_goal=ig), cfg)
            assert r in (0.0, cfg.lambda_s)


class TestBatchAgreement:
    def test_batch_matches_scalar_path(self):
        rng = np.random.default_rng(5)
        n = 64
        tp = rng.uniform(0, np.pi, n)
        tt = rng.uniform(0, np.pi, n)
        dxp = rng.uniform(0, 0.03, n)
        dxt = rng.uniform(0, 0.03, n)
        q = rng.normal(0, 0.5, (n, 12))
        q0 = np.zeros(12)
        ig = rng.uniform(size=n) < 0.5

        cfg = RewardConfig(lambda_dense=1.0, lambda_bonus=3.0)
        batch = step_reward_batch(tp, tt, dxp, dxt, q, q0, ig, cfg)
        for i in range(n):
            ri = mixed_reward(RewardInputs(tp[i], tt[i], dxp[i], dxt[i], q[i], q0, bool(ig[i])), cfg)
            assert batch[i] == pytest.approx(ri, abs=1e-12)

        cfg_c = RewardConfig(mode="clipped", theta_clip=0.075, lambda_bonus=0.0)
        batch_c = step_reward_batch(tp, tt, dxp, dxt, q, q0, ig, cfg_c)
        for i in range(n):
            ri = clipped_reward(RewardInputs(tp[i], tt[i], dxp[i], dxt[i], q[i], q0, bool(ig[i])), cfg_c)
            assert batch_c[i] == pytest.approx(ri, abs=1e-12)
