"""Experiment configuration: one JSON document drives a full train/eval arm.

Schema (version 1):

    {
      "schema_version": 1,
      "name": "to_mix3",
      "mode": "fixed_horizon" | "speed_horizon",
      "scheme": "oracle" | "coupled",
      "conditioning": "none" | "speed" | "time" | "both",
      "env": { ... EnvConfig fields ... },
      "reward": { ... RewardConfig fields ... },
      "ppo": { ... PPOConfig fields ... },
      "omega_d_law": {"kind": "constant", "value": 1.5}
                   | {"kind": "uniform", "low": 0.25, "high": 2.5},
      "h_exp_law":  same shape, seconds,
      "eval": {"n_episodes": ..., "seed": ..., "min_theta_0": ...,
               "drop_failures": true, "grouping": "by_rounded_Td" | "by_omega_d_bucket" | "none",
               "stochastic": true, "omega_d_law": ..., "h_exp_law": ...},
      "seeds": [1, 2, 3]
    }

Dotted-path overrides (`reward.lambda_bonus=10`) are applied before
validation; values parse as JSON literals, falling back to strings. A few
historical coefficient aliases are accepted and normalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .env import CONDITIONING, MODES, SCHEMES, EnvConfig, validate_law
from .errors import ConfigError
from .ppo import PPOConfig
from .rewards import RewardConfig

SCHEMA_VERSION = 1

# accepted spellings for config keys (normalized on load)
KEY_ALIASES = {
    "lambda_to": "lambda_bonus",
    "lambda_de": "lambda_dense",
    "ecrl": "coupled",
}


def _law_from_dict(d, name: str):
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{name} must be an object with a 'kind' field")
    if d["kind"] == "constant":
        if "value" not in d:
            raise ConfigError(f"{name}: constant law needs 'value'")
        return validate_law(("constant", float(d["value"])), name)
    if d["kind"] == "uniform":
        if "low" not in d or "high" not in d:
            raise ConfigError(f"{name}: uniform law needs 'low' and 'high'")
        return validate_law(("uniform", float(d["low"]), float(d["high"])), name)
    raise ConfigError(f"{name}: unknown law kind {d['kind']!r}")


def _law_to_dict(law):
    if law[0] == "constant":
        return {"kind": "constant", "value": law[1]}
    return {"kind": "uniform", "low": law[1], "high": law[2]}


@dataclass
class EvalSpec:
    n_episodes: int = 1200
    seed: int = 1000
    min_theta_0: float = 0.7853981633974483  # pi/4
    drop_failures: bool = True
    grouping: str = "by_rounded_Td"
    stochastic: bool = True
    batch_size: int = 64
    omega_d_law: tuple = ("uniform", 0.25, 2.5)
    h_exp_law: tuple = ("constant", 0.0)

    def validate(self) -> "EvalSpec":
        if self.n_episodes <= 0:
            raise ConfigError("eval.n_episodes must be positive")
        if self.grouping not in ("by_rounded_Td", "by_omega_d_bucket", "none"):
            raise ConfigError("eval.grouping must be by_rounded_Td, by_omega_d_bucket, or none")
        validate_law(self.omega_d_law, "eval.omega_d_law")
        validate_law(self.h_exp_law, "eval.h_exp_law")
        return self

    def to_dict(self):
        d = dict(self.__dict__)
        d["omega_d_law"] = _law_to_dict(self.omega_d_law)
        d["h_exp_law"] = _law_to_dict(self.h_exp_law)
        return d

    @staticmethod
    def from_dict(d: dict) -> "EvalSpec":
        d = dict(d)
        unknown = set(d) - set(EvalSpec.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown eval config fields: {sorted(unknown)}")
        for key in ("omega_d_law", "h_exp_law"):
            if key in d:
                d[key] = _law_from_dict(d[key], f"eval.{key}")
        return EvalSpec(**d).validate()


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    mode: str = "fixed_horizon"
    scheme: str = "oracle"
    conditioning: str = "none"
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    omega_d_law: tuple = ("uniform", 0.25, 2.5)
    h_exp_law: tuple = ("constant", 2.0)
    eval: EvalSpec = field(default_factory=EvalSpec)
    seeds: tuple = (1, 2, 3)

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.conditioning not in CONDITIONING:
            raise ConfigError(f"conditioning must be one of {CONDITIONING}")
        self.env.validate()
        self.reward.validate()
        self.ppo.validate()
        validate_law(self.omega_d_law, "omega_d_law")
        validate_law(self.h_exp_law, "h_exp_law")
        self.eval.validate()
        if self.reward.mode == "clipped" and self.mode != "speed_horizon":
            raise ConfigError("reward.mode 'clipped' requires mode 'speed_horizon'")
        if self.conditioning != "none" and self.mode != "speed_horizon":
            raise ConfigError("conditioning requires mode 'speed_horizon'")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        return self

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "mode": self.mode,
            "scheme": self.scheme,
            "conditioning": self.conditioning,
            "env": self.env.to_dict(),
            "reward": dict(self.reward.__dict__),
            "ppo": self.ppo.to_dict(),
            "omega_d_law": _law_to_dict(self.omega_d_law),
            "h_exp_law": _law_to_dict(self.h_exp_law),
            "eval": self.eval.to_dict(),
            "seeds": list(self.seeds),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        doc = _normalize_keys(doc)
        version = doc.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        known = set(ExperimentConfig.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = {}
        if "env" in doc:
            kwargs["env"] = EnvConfig.from_dict(doc["env"])
        if "reward" in doc:
            rd = dict(doc["reward"])
            bad = set(rd) - set(RewardConfig.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown reward config fields: {sorted(bad)}")
            kwargs["reward"] = RewardConfig(**rd)
        if "ppo" in doc:
            kwargs["ppo"] = PPOConfig.from_dict(doc["ppo"])
        if "eval" in doc:
            kwargs["eval"] = EvalSpec.from_dict(doc["eval"])
        for key in ("omega_d_law", "h_exp_law"):
            if key in doc:
                kwargs[key] = _law_from_dict(doc[key], key)
        for key in ("name", "mode", "scheme", "conditioning"):
            if key in doc:
                kwargs[key] = KEY_ALIASES.get(doc[key], doc[key])
        if "seeds" in doc:
            kwargs["seeds"] = tuple(int(s) for s in doc["seeds"])
        return ExperimentConfig(**kwargs).validate()

    @staticmethod
    def load(path, overrides: list[str] = ()) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        for ov in overrides:
            apply_override(doc, ov)
        return ExperimentConfig.from_dict(doc)


def _normalize_keys(obj):
    if isinstance(obj, dict):
        return {KEY_ALIASES.get(k.lower() if isinstance(k, str) else k, k): _normalize_keys(v)
                for k, v in obj.items()}
    if isinstance(obj, list):
        return [_normalize_keys(v) for v in obj]
    return obj


def apply_override(doc: dict, override: str):
    """Apply one `dotted.path=value` override in place; value parses as JSON."""
    if "=" not in override:
        raise ConfigError(f"override {override!r} must look like section.key=value")
    key, raw = override.split("=", 1)
    parts = [KEY_ALIASES.get(p.lower(), p.lower()) for p in key.strip().split(".")]
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value
