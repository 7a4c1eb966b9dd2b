"""Advantage estimation, surrogate gradients, update plumbing, training smoke."""

import numpy as np
import pytest

from gaitspeed.config import ExperimentConfig
from gaitspeed.nets import Adam, GaussianPolicy, ValueNet
from gaitspeed.ppo import (
    PPOConfig,
    gae,
    normalize_advantages,
    policy_gradients,
    ppo_update,
    value_gradients,
)


def brute_force_gae(rewards, values, next_values, terminated, truncated, gamma, lam):
    """Double-loop evaluation of the exponentially weighted advantage."""
    T = len(rewards)
    deltas = np.zeros(T)
    for t in range(T):
        deltas[t] = rewards[t] + gamma * next_values[t] * (1 - terminated[t]) - values[t]
    adv = np.zeros(T)
    for t in range(T):
        acc, w = 0.0, 1.0
        for k in range(t, T):
            acc += w * deltas[k]
            if terminated[k] or truncated[k]:
                break
            w *= gamma * lam
        adv[t] = acc
    return adv


def random_trajectory(rng, T):
    rewards = rng.normal(size=(T, 1))
    values = rng.normal(size=(T, 1))
    next_values = rng.normal(size=(T, 1))
    terminated = np.zeros((T, 1), dtype=bool)
    truncated = np.zeros((T, 1), dtype=bool)
    for t in rng.choice(T, size=3, replace=False):
        if rng.uniform() < 0.5:
            terminated[t] = True
        else:
            truncated[t] = True
    return rewards, values, next_values, terminated, truncated


class TestGAE:
    def test_lambda_zero_is_one_step_td(self):
        rng = np.random.default_rng(0)
        r, v, nv, te, tr = random_trajectory(rng, 30)
        adv, ret = gae(r, v, nv, te, tr, 0.99, 0.0)
        expected = r + 0.99 * nv * (1 - te) - v
        np.testing.assert_allclose(adv, expected, atol=1e-12)

    def test_gamma_zero(self):
        rng = np.random.default_rng(1)
        r, v, nv, te, tr = random_trajectory(rng, 30)
        adv, _ = gae(r, v, nv, te, tr, 0.0, 0.95)
        np.testing.assert_allclose(adv, r - v, atol=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        r, v, nv, te, tr = random_trajectory(rng, 50)
        adv, ret = gae(r, v, nv, te, tr, 0.97, 0.9)
        brute = brute_force_gae(r[:, 0], v[:, 0], nv[:, 0], te[:, 0], tr[:, 0], 0.97, 0.9)
        np.testing.assert_allclose(adv[:, 0], brute, atol=1e-10)
        np.testing.assert_allclose(ret, adv + v, atol=1e-12)

    def test_truncation_bootstraps_termination_does_not(self):
        r = np.ones((2, 1))
        v = np.zeros((2, 1))
        nv = np.full((2, 1), 10.0)
        te = np.array([[False], [True]])
        tr = np.array([[True], [False]])
        adv, _ = gae(r, v, nv, te, tr, 0.5, 1.0)
        assert adv[0, 0] == pytest.approx(1 + 0.5 * 10.0)  # truncated: bootstraps
        assert adv[1, 0] == pytest.approx(1.0)             # terminated: does not


class TestAdvantageNormalization:
    def test_mean_zero_std_one(self):
        rng = np.random.default_rng(3)
        a = normalize_advantages(rng.normal(3.0, 7.0, size=4096))
        assert abs(a.mean()) < 1e-8
        assert abs(a.std() - 1.0) < 1e-6


def tiny_policy_batch(rng, n=40, obs_dim=3, act_dim=2, hidden=(4,)):
    pol = GaussianPolicy(obs_dim, act_dim, list(hidden), rng)
    obs = rng.normal(size=(n, obs_dim))
    a, u, logp = pol.sample(obs, rng)
    adv = rng.normal(size=n)
    return pol, {"obs": obs, "u": u, "logp": logp, "adv": adv,
                 "ret": rng.normal(size=n)}


class TestPolicyGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        pol, batch = tiny_policy_batch(rng)
        cfg = PPOConfig(clip_ratio=0.2, entropy_coef=1e-3)
        # jitter params so ratios leave the clip boundary region
        pol.set_flat(pol.flat_params() + 0.01 * rng.normal(size=pol.n_params))
        flat0 = pol.flat_params()
        ana, _ = policy_gradients(pol, batch["obs"], batch["u"], batch["logp"],
                                  batch["adv"], cfg)

        def loss(flat):
            pol.set_flat(flat)
            mean, _ = pol.trunk.forward(batch["obs"])
            std = np.exp(pol.log_std)
            z = (batch["u"] - mean) / std[None, :]
            logp_u = -0.5 * np.sum(z**2, axis=-1) - np.sum(pol.log_std) \
                - 0.5 * pol.act_dim * np.log(2 * np.pi)
            corr = np.sum(np.log1p(-np.tanh(batch["u"]) ** 2), axis=-1)
            ratio = np.exp(logp_u - corr - batch["logp"])
            s1 = ratio * batch["adv"]
            s2 = np.clip(ratio, 0.8, 1.2) * batch["adv"]
            return float(-np.mean(np.minimum(s1, s2)) - cfg.entropy_coef *
                         (np.sum(pol.log_std) + 0.5 * pol.act_dim * (1 + np.log(2 * np.pi))))

        eps = 1e-6
        num = np.zeros_like(flat0)
        for i in range(len(flat0)):
            xp = flat0.copy(); xp[i] += eps
            xm = flat0.copy(); xm[i] -= eps
            num[i] = (loss(xp) - loss(xm)) / (2 * eps)
        pol.set_flat(flat0)
        denom = max(np.max(np.abs(num)), 1e-12)
        assert np.max(np.abs(ana - num)) / denom < 1e-4

    def test_zero_advantages_leave_entropy_only(self):
        rng = np.random.default_rng(5)
        pol, batch = tiny_policy_batch(rng)
        cfg = PPOConfig(entropy_coef=1e-3)
        ana, _ = policy_gradients(pol, batch["obs"], batch["u"], batch["logp"],
                                  np.zeros_like(batch["adv"]), cfg)
        # all trunk gradients vanish; only log_std carries the entropy term
        n_trunk = pol.trunk.n_params
        np.testing.assert_allclose(ana[:n_trunk], 0.0, atol=1e-15)
        np.testing.assert_allclose(ana[n_trunk:], -cfg.entropy_coef, atol=1e-15)

    def test_inside_band_positive_advantage_reduces_to_ratio(self):
        rng = np.random.default_rng(6)
        pol, batch = tiny_policy_batch(rng)
        cfg = PPOConfig(clip_ratio=0.2, entropy_coef=0.0)
        adv = np.abs(batch["adv"]) + 0.1
        # fresh params: ratio == 1, inside the band; surrogate = ratio * adv
        ana, stats = policy_gradients(pol, batch["obs"], batch["u"], batch["logp"], adv, cfg)
        assert stats["clip_fraction"] == 0.0
        assert stats["kl"] == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_equivalence_with_vanilla_policy_gradient(self):
        # with an effectively infinite clip and ratio = 1 (first epoch), the
        # surrogate gradient equals the REINFORCE gradient of -mean(logp * A)
        rng = np.random.default_rng(7)
        pol, batch = tiny_policy_batch(rng, n=60)
        cfg = PPOConfig(clip_ratio=1e18, entropy_coef=0.0)
        ana, _ = policy_gradients(pol, batch["obs"], batch["u"], batch["logp"],
                                  batch["adv"], cfg)

        mean, acts = pol.trunk.forward(batch["obs"])
        std = np.exp(pol.log_std)
        z = (batch["u"] - mean) / std[None, :]
        n = len(batch["obs"])
        dlogp = -batch["adv"] / n
        dmean = dlogp[:, None] * (z / std[None, :])
        trunk_grads, _ = pol.trunk.backward(acts, dmean)
        vanilla = {f"trunk.{k}": v for k, v in trunk_grads.items()}
        vanilla["log_std"] = np.sum(dlogp[:, None] * (z**2 - 1.0), axis=0)
        vanilla_flat = pol.flatten_grads(vanilla)
        assert np.max(np.abs(ana - vanilla_flat)) < 1e-8


class TestValueGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        val = ValueNet(3, [4], rng)
        obs = rng.normal(size=(20, 3))
        ret = rng.normal(size=20)
        cfg = PPOConfig()
        ana, _ = value_gradients(val, obs, ret, cfg)
        flat0 = val.flat_params()

        def loss(flat):
            val.set_flat(flat)
            return float(0.5 * cfg.value_coef * np.mean((val(obs) - ret) ** 2))

        eps = 1e-6
        num = np.zeros_like(flat0)
        for i in range(len(flat0)):
            xp = flat0.copy(); xp[i] += eps
            xm = flat0.copy(); xm[i] -= eps
            num[i] = (loss(xp) - loss(xm)) / (2 * eps)
        val.set_flat(flat0)
        assert np.max(np.abs(ana - num)) / max(np.max(np.abs(num)), 1e-12) < 1e-4


class TestPPOUpdate:
    def test_runs_and_reports(self):
        rng = np.random.default_rng(9)
        pol, batch = tiny_policy_batch(rng, n=64)
        val = ValueNet(3, [4], np.random.default_rng(10))
        cfg = PPOConfig(minibatch_size=32, epochs=2)
        stats = ppo_update(pol, val, Adam(pol.n_params, lr=1e-3),
                           Adam(val.n_params, lr=1e-3), batch, cfg,
                           np.random.default_rng(0))
        for key in ("pi_loss", "v_loss", "entropy", "clip_fraction", "kl"):
            assert key in stats
        assert not stats["aborted"]

    def test_aborts_on_nonfinite(self):
        rng = np.random.default_rng(11)
        pol, batch = tiny_policy_batch(rng, n=16)
        val = ValueNet(3, [4], np.random.default_rng(12))
        batch["adv"] = np.full_like(batch["adv"], np.nan)
        cfg = PPOConfig(minibatch_size=16, epochs=1)
        before = pol.flat_params().copy()
        stats = ppo_update(pol, val, Adam(pol.n_params), Adam(val.n_params),
                           batch, cfg, np.random.default_rng(0))
        assert stats["aborted"]
        np.testing.assert_array_equal(pol.flat_params(), before)


class TestTrainingSmoke:
    @pytest.fixture(scope="class")
    @staticmethod
    def smoke_run(tmp_path_factory):
        out = tmp_path_factory.mktemp("smoke") / "run"
        exp = ExperimentConfig(name="smoke")
        exp.ppo.n_updates = 10
        exp.ppo.n_envs = 8
        exp.ppo.rollout_steps = 24
        exp.ppo.minibatch_size = 96
        exp.validate()
        from gaitspeed import ppo as ppo_mod
        result = ppo_mod.train(exp, seed=1, out_dir=out)
        return exp, out, result

    def test_emits_one_curve_point_per_update(self, smoke_run):
        _, out, _ = smoke_run
        lines = [l for l in (out / "curves.csv").read_text().splitlines()
                 if l and not l.startswith("#")]
        assert len(lines) == 1 + 10  # header + 10 updates

    def test_checkpoint_reload_reproduces_evaluation(self, smoke_run):
        from gaitspeed import evaluation
        _, out, _ = smoke_run
        b1 = evaluation.load_bundle(out)
        b2 = evaluation.load_bundle(out)
        r1 = evaluation.run_eval(b1, 6, seed=77)
        r2 = evaluation.run_eval(b2, 6, seed=77)
        assert r1 == r2

    def test_config_snapshot_written(self, smoke_run):
        _, out, _ = smoke_run
        assert (out / "config.json").exists()
        assert (out / "checkpoint" / "policy.bin").exists()
        assert (out / "run.json").exists()

    def test_training_deterministic(self, tmp_path):
        exp = ExperimentConfig(name="det")
        exp.ppo.n_updates = 3
        exp.ppo.n_envs = 4
        exp.ppo.rollout_steps = 16
        exp.ppo.minibatch_size = 64
        exp.validate()
        from gaitspeed import ppo as ppo_mod
        ppo_mod.train(exp, seed=2, out_dir=tmp_path / "a")
        ppo_mod.train(exp, seed=2, out_dir=tmp_path / "b")
        ca = (tmp_path / "a" / "curves.csv").read_text()
        cb = (tmp_path / "b" / "curves.csv").read_text()
        assert ca == cb
        pa = (tmp_path / "a" / "checkpoint" / "policy.bin").read_bytes()
        pb = (tmp_path / "b" / "checkpoint" / "policy.bin").read_bytes()
        assert pa == pb
