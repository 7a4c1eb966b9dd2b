"""Clipped-surrogate policy optimization with generalized advantage estimation.

The trainer is a single-process loop over vectorized rollouts. All gradients
are computed by hand (see `nets`), optimizers are deterministic Adam, and
every random draw comes from a named seeded stream, so a (config, seed) pair
reproduces its training curve bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import VecReorientEnv, build_xi  # noqa: F401  (build_xi is part of this module's surface)
from .errors import ConfigError, NumericalError
from .estimator import EstimatorBuffer, EstimatorTrainer, PoseEstimator
from .io_utils import config_hash, git_commit, save_network, write_csv
from .nets import Adam, GaussianPolicy, ValueNet, clip_grad_norm
from .rewards import step_reward_batch


@dataclass
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    entropy_coef: float = 1e-3
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 2048
    n_envs: int = 64
    rollout_steps: int = 96
    n_updates: int = 250
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    hidden: tuple = (256, 256)
    init_log_std: float = -0.7
    estimator_hidden: int = 128
    estimator_lr: float = 1e-3
    estimator_window: int = 20
    estimator_batches: int = 8
    estimator_windows_per_batch: int = 64

    def validate(self) -> "PPOConfig":
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("ppo.gamma must lie in (0, 1]")
        if self.clip_ratio <= 0:
            raise ConfigError("ppo.clip_ratio must be positive")
        for name in ("learning_rate", "epochs", "minibatch_size", "n_envs",
                     "rollout_steps", "n_updates"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"ppo.{name} must be positive")
        return self

    def to_dict(self):
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d

    @staticmethod
    def from_dict(d: dict) -> "PPOConfig":
        d = dict(d)
        unknown = set(d) - set(PPOConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ppo config fields: {sorted(unknown)}")
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return PPOConfig(**d).validate()


# ---------------------------------------------------------------------------
# generalized advantage estimation
# ---------------------------------------------------------------------------

def gae(rewards: np.ndarray, values: np.ndarray, next_values: np.ndarray,
        terminated: np.ndarray, truncated: np.ndarray,
        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns over a (T, ...) batch of rollouts.

    Termination bootstraps zero; truncation bootstraps `next_values` (the
    value of the state the episode was cut at). The recursion restarts after
    any episode end.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    adv = np.zeros_like(rewards)
    carry = np.zeros_like(rewards[0])
    term = terminated.astype(np.float64)
    trunc = truncated.astype(np.float64)
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_values[t] * (1.0 - term[t]) - values[t]
        carry = delta + gamma * lam * (1.0 - term[t]) * (1.0 - trunc[t]) * carry
        adv[t] = carry
    return adv, adv + values


# ---------------------------------------------------------------------------
# surrogate loss gradients
# ---------------------------------------------------------------------------

def policy_gradients(policy: GaussianPolicy, obs, u, logp_old, adv, cfg: PPOConfig):
    """Gradient of the clipped surrogate + entropy bonus w.r.t. policy params.

    Returns (flat grads, stats). Minimizes
    -mean(min(ratio*A, clip(ratio)*A)) - entropy_coef * H.
    """
    n = len(obs)
    mean, acts = policy.trunk.forward(obs)
    std = np.exp(policy.log_std)
    z = (u - mean) / std[None, :]
    logp_u = -0.5 * np.sum(z**2, axis=-1) - np.sum(policy.log_std) \
        - 0.5 * policy.act_dim * math.log(2 * math.pi)
    corr = np.sum(np.log1p(-np.tanh(u) ** 2 + 1e-300), axis=-1)
    logp = logp_u - corr
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    s1 = ratio * adv
    s2 = clipped * adv
    use_unclipped = s1 <= s2  # gradient follows the active branch of the min

    dlogp = np.where(use_unclipped, ratio * adv, 0.0) * (-1.0 / n)
    dmean = dlogp[:, None] * (z / std[None, :])
    trunk_grads, _ = policy.trunk.backward(acts, dmean)
    dlogstd = np.sum(dlogp[:, None] * (z**2 - 1.0), axis=0)
    dlogstd -= cfg.entropy_coef  # d/dlogstd of -coef * H, H = sum(logstd) + const

    grads = {f"trunk.{k}": v for k, v in trunk_grads.items()}
    grads["log_std"] = dlogstd
    flat = policy.flatten_grads(grads)
    stats = {
        "pi_loss": float(-np.mean(np.minimum(s1, s2))),
        "entropy": policy.entropy(),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_ratio)),
        "kl": float(np.mean(logp_old - logp)),
    }
    return flat, stats


def value_gradients(value: ValueNet, obs, returns, cfg: PPOConfig):
    n = len(obs)
    v, acts = value.trunk.forward(obs)
    err = v[:, 0] - returns
    dout = (cfg.value_coef / n) * err[:, None]
    trunk_grads, _ = value.trunk.backward(acts, dout)
    grads = {f"trunk.{k}": v_ for k, v_ in trunk_grads.items()}
    flat = value.flatten_grads(grads)
    return flat, {"v_loss": float(0.5 * cfg.value_coef * np.mean(err**2))}


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = adv - adv.mean()
    return adv / max(float(adv.std()), 1e-12)


def ppo_update(policy: GaussianPolicy, value: ValueNet, pol_opt: Adam, val_opt: Adam,
               batch: dict, cfg: PPOConfig, rng: np.random.Generator) -> dict:
    """Epochs of minibatched clipped-surrogate updates on one rollout batch.

    Aborts (without stepping) if any gradient turns non-finite.
    """
    obs, u = batch["obs"], batch["u"]
    logp_old = batch["logp"]
    if not all(np.all(np.isfinite(batch[k])) for k in ("obs", "u", "logp", "adv", "ret")):
        return {"aborted": True}
    adv = normalize_advantages(batch["adv"])
    ret = batch["ret"]
    n = len(obs)
    stats_acc: dict[str, list] = {}
    aborted = False
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            mb = perm[start:start + cfg.minibatch_size]
            pg, pstats = policy_gradients(policy, obs[mb], u[mb], logp_old[mb], adv[mb], cfg)
            vg, vstats = value_gradients(value, obs[mb], ret[mb], cfg)
            if not (np.all(np.isfinite(pg)) and np.all(np.isfinite(vg))):
                aborted = True
                continue
            pg, _ = clip_grad_norm(pg, cfg.max_grad_norm)
            vg, _ = clip_grad_norm(vg, cfg.max_grad_norm)
            policy.set_flat(pol_opt.step(policy.flat_params(), pg))
            value.set_flat(val_opt.step(value.flat_params(), vg))
            for k, v_ in {**pstats, **vstats}.items():
                stats_acc.setdefault(k, []).append(v_)
    out = {k: float(np.mean(v)) for k, v in stats_acc.items()}
    out["aborted"] = aborted
    return out


# ---------------------------------------------------------------------------
# rollout collection and the training loop
# ---------------------------------------------------------------------------

@dataclass
class RolloutMetrics:
    segments_ended: int = 0
    segments_succeeded: int = 0
    first_reach_times: list = field(default_factory=list)
    mean_reward: float = 0.0
    drops: int = 0

    @property
    def success_rate(self) -> float:
        return self.segments_succeeded / self.segments_ended if self.segments_ended else float("nan")

    @property
    def mean_first_reach(self) -> float:
        return float(np.mean(self.first_reach_times)) if self.first_reach_times else float("nan")


class Trainer:
    """Owns the environments, networks, optimizers, and the estimator loop."""

    def __init__(self, exp, seed: int):
        self.exp = exp
        self.seed = seed
        ppo_cfg: PPOConfig = exp.ppo
        env_cfg = exp.env
        self.env = VecReorientEnv(env_cfg, ppo_cfg.n_envs, seed, mode=exp.mode,
                                  scheme=exp.scheme, conditioning=exp.conditioning,
                                  omega_law=exp.omega_d_law, h_exp_law=exp.h_exp_law)
        self.cfg = ppo_cfg
        obs_dim = self.env.obs_dim
        self.policy = GaussianPolicy(obs_dim, env_cfg.n_joints + 1, list(ppo_cfg.hidden),
                                     np.random.default_rng(np.random.SeedSequence([seed, 103])),
                                     init_log_std=ppo_cfg.init_log_std)
        self.value = ValueNet(obs_dim, list(ppo_cfg.hidden),
                              np.random.default_rng(np.random.SeedSequence([seed, 104])))
        self.pol_opt = Adam(self.policy.n_params, lr=ppo_cfg.learning_rate)
        self.val_opt = Adam(self.value.n_params, lr=ppo_cfg.learning_rate)
        self.rollout_rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
        self.update_rng = np.random.default_rng(np.random.SeedSequence([seed, 102]))

        self.estimator = None
        self.est_trainer = None
        if exp.scheme == "coupled":
            self.estimator = PoseEstimator(self.env.estimator_input_dim, ppo_cfg.estimator_hidden,
                                           np.random.default_rng(np.random.SeedSequence([seed, 105])))
            self.est_trainer = EstimatorTrainer(
                self.estimator, lr=ppo_cfg.estimator_lr, window=ppo_cfg.estimator_window,
                windows_per_batch=ppo_cfg.estimator_windows_per_batch,
                batches_per_update=ppo_cfg.estimator_batches, seed=seed)
            self.est_hidden = np.zeros((ppo_cfg.n_envs, ppo_cfg.estimator_hidden))
        self.fresh = np.ones(ppo_cfg.n_envs, dtype=bool)
        self.env.reset_all()

    # -- one rollout -----------------------------------------------------------

    def collect(self) -> tuple[dict, RolloutMetrics, EstimatorBuffer | None]:
        cfg, env, exp = self.cfg, self.env, self.exp
        T, n = cfg.rollout_steps, cfg.n_envs
        obs_dim, act_dim = env.obs_dim, self.policy.act_dim
        obs = np.empty((T, n, obs_dim))
        us = np.empty((T, n, act_dim))
        logps = np.empty((T, n))
        values = np.empty((T, n))
        next_values = np.zeros((T, n))
        rewards = np.empty((T, n))
        terminated = np.zeros((T, n), dtype=bool)
        truncated = np.zeros((T, n), dtype=bool)
        metrics = RolloutMetrics()

        est = self.estimator is not None
        if est:
            z_dim = env.cfg.k * 2 * env.cfg.n_joints
            eb_z = np.empty((T, n, z_dim))
            eb_hidden = np.empty((T, n, self.cfg.estimator_hidden))
            eb_prev_q = np.empty((T, n, 4))
            eb_prev_x = np.empty((T, n, 3))
            eb_true_q = np.empty((T, n, 4))
            eb_true_x = np.empty((T, n, 3))
            eb_fresh = np.zeros((T, n), dtype=bool)

        reward_cfg = exp.reward
        f_nn = env.cfg.f_nn
        total_reward = 0.0

        for t in range(T):
            o = env.observation_vectors()
            obs[t] = o
            a, u, logp = self.policy.sample(o, self.rollout_rng)
            us[t] = u
            logps[t] = logp
            values[t] = self.value(o)

            if est:
                eb_fresh[t] = self.fresh
                eb_hidden[t] = self.est_hidden
                eb_prev_q[t] = env.obj_q
                eb_prev_x[t] = env.obj_x

            ev = env.step(a)
            theta_clip = env.omega_d / f_nn if reward_cfg.mode == "clipped" \
                and reward_cfg.theta_clip is None else reward_cfg.theta_clip
            r = step_reward_batch(ev["theta_prev"], ev["theta_t"], ev["delta_x_prev"],
                                  ev["delta_x_t"], ev["q"], env.q_home, ev["in_goal"],
                                  reward_cfg, theta_clip)
            rewards[t] = r
            total_reward += float(r.sum())
            terminated[t] = ev["terminated"]
            truncated[t] = ev["truncated"]
            metrics.segments_ended += int(ev["segment_ended"].sum())
            metrics.segments_succeeded += int(ev["segment_success"].sum())
            metrics.drops += int((ev["dropped"] & ev["terminated"]).sum())
            firsts = ev["reached_goal"] & (env.first_reach_step == env.t)
            metrics.first_reach_times.extend((env.t[firsts] / f_nn).tolist())

            if est:
                est_inputs = env.estimator_inputs()
                eb_z[t] = env.zbuf.reshape(n, -1)
                eb_true_q[t] = env.obj_q
                eb_true_x[t] = env.obj_x
                est_q, est_x, h_new = self.estimator.step_batch(
                    est_inputs, self.est_hidden, env.est_q, env.est_x)
                env.set_pose_estimates(est_q, est_x)
                self.est_hidden = h_new

            ended = ev["terminated"] | ev["truncated"]
            need_final = ev["truncated"] | (np.full(n, t == T - 1) & ~ev["terminated"])
            if np.any(need_final):
                fo = env.observation_vectors()
                fv = self.value(fo)
                next_values[t, need_final] = fv[need_final]
            if np.any(ended):
                env.reset_where(ended)
                if est:
                    self.est_hidden[ended] = 0.0
            self.fresh = ended

        # chain next-step values where the episode continued
        cont = ~(terminated | truncated)
        next_values[:-1][cont[:-1]] = values[1:][cont[:-1]]

        adv, ret = gae(rewards, values, next_values, terminated, truncated,
                       cfg.gamma, cfg.gae_lambda)
        metrics.mean_reward = total_reward / (T * n)
        batch = {
            "obs": obs.reshape(T * n, -1),
            "u": us.reshape(T * n, -1),
            "logp": logps.reshape(-1),
            "adv": adv.reshape(-1),
            "ret": ret.reshape(-1),
        }
        buffer = None
        if est:
            buffer = EstimatorBuffer(eb_z, eb_hidden, eb_prev_q, eb_prev_x,
                                     eb_true_q, eb_true_x, eb_fresh,
                                     shape_encoder=env.shape_encoder,
                                     stack_depth=env.cfg.k, n_joints=env.cfg.n_joints)
        return batch, metrics, buffer


def train(exp, seed: int, out_dir) -> dict:
    """Run the full training loop for one (experiment, seed) arm.

    Writes curves.csv, a reloadable checkpoint, the config snapshot, and a
    run manifest into `out_dir`. Returns summary statistics.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(exp, seed)
    cfg = trainer.cfg
    chash = config_hash(exp.to_dict())
    t_start = time.time()

    rows = []
    comments = [f"config_hash={chash}", f"seed={seed}", f"commit={git_commit()}"]
    columns = ["update", "env_steps", "success_rate", "mean_T", "mean_reward",
               "clip_fraction", "kl"]
    curves_path = out_dir / "curves.csv"
    est_loss = float("nan")

    for update in range(1, cfg.n_updates + 1):
        batch, metrics, buffer = trainer.collect()
        stats = ppo_update(trainer.policy, trainer.value, trainer.pol_opt,
                           trainer.val_opt, batch, cfg, trainer.update_rng)
        if trainer.est_trainer is not None and buffer is not None:
            est_loss = trainer.est_trainer.update(buffer)
        params_ok = np.all(np.isfinite(trainer.policy.flat_params())) and \
            np.all(np.isfinite(trainer.value.flat_params()))
        if not params_ok:
            _save_checkpoint(trainer, exp, seed, out_dir / "diagnostic_checkpoint", update, chash)
            raise NumericalError(f"non-finite parameters after update {update}")
        rows.append([update, update * cfg.n_envs * cfg.rollout_steps,
                     metrics.success_rate, metrics.mean_first_reach, metrics.mean_reward,
                     stats.get("clip_fraction", float("nan")), stats.get("kl", float("nan"))])
        if update % 10 == 0 or update == cfg.n_updates:
            write_csv(curves_path, columns, rows, comments)
            msg = (f"[{exp.name} seed={seed}] update {update}/{cfg.n_updates} "
                   f"b={metrics.success_rate:.3f} T={metrics.mean_first_reach:.2f} "
                   f"r={metrics.mean_reward:.4f}")
            if trainer.est_trainer is not None:
                msg += f" est_loss={est_loss:.4f}"
            print(msg, flush=True)

    write_csv(curves_path, columns, rows, comments)
    _save_checkpoint(trainer, exp, seed, out_dir / "checkpoint", cfg.n_updates, chash)
    (out_dir / "config.json").write_text(exp.to_json() + "\n")
    from .io_utils import canonical_json
    (out_dir / "run.json").write_text(canonical_json(
        {"seed": seed, "config_hash": chash, "commit": git_commit(),
         "wall_seconds": round(time.time() - t_start, 3)}) + "\n")
    return {"curves": str(curves_path), "checkpoint": str(out_dir / "checkpoint"),
            "final_success": rows[-1][2], "wall_seconds": time.time() - t_start}


def _save_checkpoint(trainer: Trainer, exp, seed: int, ckpt_dir: Path, updates: int, chash: str):
    extra = {"config_hash": chash, "seed": seed, "updates": updates,
             "scheme": exp.scheme, "conditioning": exp.conditioning}
    save_network(ckpt_dir, "policy", trainer.policy, "policy", extra)
    save_network(ckpt_dir, "value", trainer.value, "value", extra)
    if trainer.estimator is not None:
        save_network(ckpt_dir, "estimator", trainer.estimator, "estimator", extra)
    (Path(ckpt_dir) / "config.json").write_text(exp.to_json() + "\n")
