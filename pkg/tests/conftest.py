"""Shared fixtures: lazily trained, cached experiment arms for acceptance tests.

Training an arm takes minutes, so arms are trained once per session and
reused across criteria. Set GAITSPEED_ACCEPTANCE_CACHE to a directory to
persist trained arms across sessions (useful while iterating on the tests
themselves); by default everything lands in a session temp directory.
"""

import os
from pathlib import Path

import pytest

from gaitspeed import evaluation, ppo
from gaitspeed.config import ExperimentConfig


def desk_scale(exp: ExperimentConfig, updates: int = 400) -> ExperimentConfig:
    exp.ppo.n_envs = 128
    exp.ppo.rollout_steps = 64
    exp.ppo.n_updates = updates
    return exp


def time_optimal_arm(bonus: float) -> ExperimentConfig:
    exp = desk_scale(ExperimentConfig(name=f"to_bonus{bonus:g}"))
    exp.reward.lambda_dense = 1.0
    exp.reward.lambda_bonus = bonus
    return exp.validate()


def conditioning_arm(conditioning: str, scheme: str = "oracle",
                     updates: int = 650) -> ExperimentConfig:
    exp = desk_scale(ExperimentConfig(
        name=f"{scheme}_{conditioning}", mode="speed_horizon",
        conditioning=conditioning, scheme=scheme), updates)
    exp.reward.mode = "clipped"
    exp.reward.lambda_bonus = 0.0
    exp.omega_d_law = ("uniform", 0.25, 2.5)
    exp.h_exp_law = ("uniform", 0.0, 1.0)
    return exp.validate()


def fixed_speed_arm(omega_d: float, h_exp: float, updates: int = 500) -> ExperimentConfig:
    exp = desk_scale(ExperimentConfig(
        name=f"fs_w{omega_d:g}_h{h_exp:g}", mode="speed_horizon", conditioning="none"), updates)
    exp.reward.mode = "clipped"
    exp.reward.lambda_bonus = 0.0
    exp.omega_d_law = ("constant", omega_d)
    exp.h_exp_law = ("constant", h_exp)
    return exp.validate()


class ArmCache:
    def __init__(self, root: Path):
        self.root = Path(root)

    def run_dir(self, exp: ExperimentConfig, seed: int) -> Path:
        return self.root / exp.name / f"seed{seed}"

    def train(self, exp: ExperimentConfig, seed: int) -> Path:
        out = self.run_dir(exp, seed)
        if not (out / "checkpoint" / "policy.bin").exists():
            ppo.train(exp, seed, out)
        return out

    def bundle(self, exp: ExperimentConfig, seed: int) -> evaluation.PolicyBundle:
        return evaluation.load_bundle(self.train(exp, seed))


@pytest.fixture(scope="session")
def arm_cache(tmp_path_factory) -> ArmCache:
    override = os.environ.get("GAITSPEED_ACCEPTANCE_CACHE")
    root = Path(override) if override else tmp_path_factory.mktemp("acceptance_arms")
    root.mkdir(parents=True, exist_ok=True)
    return ArmCache(root)
