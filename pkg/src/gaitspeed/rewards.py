"""Reward algebra for the reorientation task.

Four ingredients, combined per configuration:

* goal bonus       -- flat payment per step spent inside the goal threshold
* angle progress   -- decrease of the goal angle since the previous step
* auxiliary terms  -- position-keeping progress and a quartic joint penalty
* clipped progress -- angle progress capped per step (no lower clamp)

All functions are pure; training evaluates them on privileged simulator
state even when the policy itself runs on estimated poses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

REWARD_MODES = ("mixed", "clipped")


@dataclass
class RewardConfig:
    lambda_s: float = 0.03        # bonus per in-goal step
    lambda_theta: float = 1.0     # angle-progress weight
    lambda_x: float = 8.0         # position-keeping weight
    lambda_q: float = 1.0 / 24.0  # joint-posture penalty weight
    lambda_dense: float = 1.0     # weight of the dense shaped term
    lambda_bonus: float = 0.0     # weight of the goal bonus term
    theta_clip: float | None = None  # per-step progress cap, clipped mode only
    mode: str = "mixed"

    def validate(self) -> "RewardConfig":
        for name in ("lambda_s", "lambda_theta", "lambda_x", "lambda_q",
                     "lambda_dense", "lambda_bonus"):
            if getattr(self, name) < 0:
                raise ConfigError(f"reward.{name} must be non-negative")
        if self.mode not in REWARD_MODES:
            raise ConfigError(f"reward.mode must be one of {REWARD_MODES}")
        if self.mode == "clipped":
            if self.lambda_bonus != 0.0:
                # the bonus would drown out the cap that sets the pace
                raise ConfigError("clipped mode excludes the goal bonus (lambda_bonus must be 0)")
            # theta_clip None means: derive omega_d / f_nn per episode
            if self.theta_clip is not None and self.theta_clip <= 0:
                raise ConfigError("theta_clip must be positive when set")
        return self


@dataclass
class RewardInputs:
    """Per-step quantities consumed by the reward functions."""

    theta_prev: float
    theta_t: float
    delta_x_prev: float
    delta_x_t: float
    q_t: np.ndarray
    q_home: np.ndarray
    in_goal: bool

    @staticmethod
    def static(theta: float = 0.0, n_joints: int = 12, in_goal: bool = False) -> "RewardInputs":
        z = np.zeros(n_joints)
        return RewardInputs(theta, theta, 0.0, 0.0, z, z.copy(), in_goal)


def goal_bonus(inputs: RewardInputs, cfg: RewardConfig) -> float:
    """lambda_s while strictly inside the goal threshold, else 0."""
    return cfg.lambda_s if inputs.in_goal else 0.0


def auxiliary_reward(inputs: RewardInputs, cfg: RewardConfig) -> float:
    """Position-keeping progress minus the quartic joint-posture penalty."""
    pos = cfg.lambda_x * (inputs.delta_x_prev - inputs.delta_x_t)
    dq = np.asarray(inputs.q_t) - np.asarray(inputs.q_home)
    return pos - cfg.lambda_q * float(np.sum(dq**4))


def dense_reward(inputs: RewardInputs, cfg: RewardConfig) -> float:
    """Angle progress plus the auxiliary terms."""
    return cfg.lambda_theta * (inputs.theta_prev - inputs.theta_t) + auxiliary_reward(inputs, cfg)


def mixed_reward(inputs: RewardInputs, cfg: RewardConfig) -> float:
    """lambda_dense * dense + lambda_bonus * goal bonus."""
    r = 0.0
    if cfg.lambda_dense != 0.0:
        r += cfg.lambda_dense * dense_reward(inputs, cfg)
    if cfg.lambda_bonus != 0.0:
        r += cfg.lambda_bonus * goal_bonus(inputs, cfg)
    return r


def clipped_reward(inputs: RewardInputs, cfg: RewardConfig) -> float:
    """Dense reward with the angle progress capped at theta_clip.

    The cap is one-sided: regression (negative progress) is charged in full.
    """
    progress = min(inputs.theta_prev - inputs.theta_t, cfg.theta_clip)
    return cfg.lambda_theta * progress + auxiliary_reward(inputs, cfg)


def step_reward(inputs: RewardInputs, cfg: RewardConfig) -> float:
    if cfg.mode == "clipped":
        return clipped_reward(inputs, cfg)
    return mixed_reward(inputs, cfg)


def clip_from_target_speed(omega_d: float, f_nn: float) -> float:
    """Per-step progress cap that equals the target speed: omega_d / f_nn."""
    if omega_d <= 0:
        raise ConfigError("target speed must be positive")
    return omega_d / f_nn


# -- vectorized variant used by the trainer ---------------------------------

def step_reward_batch(theta_prev, theta_t, dx_prev, dx_t, q, q_home, in_goal,
                      cfg: RewardConfig, theta_clip=None) -> np.ndarray:
    """Same algebra as `step_reward` over (n,) arrays.

    `theta_clip` may be an (n,) array in clipped mode since the cap follows
    each episode's target speed.
    """
    dq = q - q_home[None, :]
    aux = cfg.lambda_x * (dx_prev - dx_t) - cfg.lambda_q * np.sum(dq**4, axis=-1)
    progress = theta_prev - theta_t
    if cfg.mode == "clipped":
        clip = cfg.theta_clip if theta_clip is None else theta_clip
        return cfg.lambda_theta * np.minimum(progress, clip) + aux
    dense = cfg.lambda_theta * progress + aux
    return cfg.lambda_dense * dense + cfg.lambda_bonus * cfg.lambda_s * in_goal.astype(np.float64)
