"""Evaluation episodes, metric filters, groupings, and plot-ready exports.

Evaluation uses fresh single-goal episodes: the policy succeeds when the true
goal angle first drops below the success threshold before the timeout,
regardless of any target-time budget. Per-episode random streams derive from
(seed, episode index), so results are independent of batch size and can be
reproduced episode by episode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .env import VecReorientEnv
from .errors import CompatibilityError, ConfigError
from .estimator import PoseEstimator
from .io_utils import config_hash, git_commit, load_network, write_csv
from .nets import GaussianPolicy


@dataclass
class EpisodeResult:
    index: int
    success: bool
    theta_0: float
    T: float | None          # seconds to first reach, None on failure
    omega: float | None      # theta_0 / T, None unless success with T > 0
    omega_d: float | None
    target_time: float | None
    h_exp: float | None
    dropped: bool
    steps: int


@dataclass
class GroupStats:
    key: object
    count: int
    mean_T: float
    std_T: float
    median_T: float
    p5_T: float
    p95_T: float
    mean_omega: float
    std_omega: float
    median_omega: float
    p5_omega: float
    p95_omega: float


@dataclass
class MetricsReport:
    n_episodes: int
    n_success: int
    success_rate: float          # pre-filter, successes / episodes
    n_retained: int
    discarded_fraction: float
    grouping: str
    groups: list
    spearman_T_Td: float | None


# ---------------------------------------------------------------------------
# checkpoint bundle
# ---------------------------------------------------------------------------

@dataclass
class PolicyBundle:
    exp: ExperimentConfig
    policy: GaussianPolicy
    estimator: PoseEstimator | None
    manifest: dict

    @property
    def scheme(self) -> str:
        return self.manifest["scheme"]


def load_bundle(run_dir) -> PolicyBundle:
    """Load a training run directory (or its checkpoint/ subdirectory)."""
    run_dir = Path(run_dir)
    ckpt = run_dir / "checkpoint" if (run_dir / "checkpoint").is_dir() else run_dir
    cfg_path = ckpt / "config.json"
    if not cfg_path.exists():
        raise ConfigError(f"no config snapshot found under {ckpt}")
    exp = ExperimentConfig.from_dict(json.loads(cfg_path.read_text()))
    manifest, params = load_network(ckpt, "policy")
    arch = manifest["architecture"]
    policy = GaussianPolicy(arch["obs_dim"], arch["act_dim"],
                            arch["sizes"][1:-1], np.random.default_rng(0))
    policy.set_flat(params)
    estimator = None
    if exp.scheme == "coupled":
        est_manifest, est_params = load_network(ckpt, "estimator")
        ea = est_manifest["architecture"]
        estimator = PoseEstimator(ea["in_dim"], ea["hidden_dim"], np.random.default_rng(0))
        estimator.set_flat(est_params)
    return PolicyBundle(exp, policy, estimator, manifest)


# ---------------------------------------------------------------------------
# episode runner
# ---------------------------------------------------------------------------

def run_eval(bundle: PolicyBundle, n_episodes: int, seed: int,
             omega_d_law=None, h_exp_law=None, stochastic: bool = True,
             batch_size: int = 64) -> list[EpisodeResult]:
    """Run fresh evaluation episodes and return per-episode results.

    Never feeds ground-truth poses to a policy trained against the estimator:
    the pose source is fixed by the checkpoint's training scheme.
    """
    exp = bundle.exp
    if exp.scheme == "coupled" and bundle.estimator is None:
        raise CompatibilityError("coupled-scheme checkpoint lacks an estimator")
    omega_d_law = omega_d_law or exp.eval.omega_d_law
    h_exp_law = h_exp_law or exp.eval.h_exp_law
    cfg = exp.env
    results: list[EpisodeResult] = []

    for start in range(0, n_episodes, batch_size):
        b = min(batch_size, n_episodes - start)
        env = VecReorientEnv(cfg, b, seed, mode=exp.mode, scheme=exp.scheme,
                             conditioning=exp.conditioning, eval_mode=True,
                             omega_law=omega_d_law, h_exp_law=h_exp_law,
                             index_offset=start)
        env.reset_all()
        act_rngs = [np.random.default_rng(np.random.SeedSequence([seed, start + i, 1]))
                    for i in range(b)]
        est_hidden = None
        if bundle.estimator is not None:
            est_hidden = np.zeros((b, bundle.estimator.hidden_dim))

        active = np.ones(b, dtype=bool)
        success = np.zeros(b, dtype=bool)
        reach_T = np.full(b, np.nan)
        theta0 = env.theta0.copy()
        omega_d = env.omega_d.copy()
        h_exp = env.h_exp.copy()
        steps = np.zeros(b, dtype=np.int64)

        # an episode can start inside the goal region
        instant = theta0 < cfg.success_threshold
        success[instant] = True
        reach_T[instant] = 0.0
        active[instant] = False

        while np.any(active):
            obs = env.observation_vectors()
            mean, _ = bundle.policy.trunk.forward(obs)
            if stochastic:
                std = np.exp(bundle.policy.log_std)
                u = mean.copy()
                for i in np.flatnonzero(active):
                    u[i] += std * act_rngs[i].standard_normal(bundle.policy.act_dim)
                actions = np.tanh(u)
            else:
                actions = np.tanh(mean)
            ev = env.step(actions, mask=active)
            if bundle.estimator is not None:
                est_q, est_x, est_hidden = bundle.estimator.step_batch(
                    env.estimator_inputs(), est_hidden, env.est_q, env.est_x)
                env.set_pose_estimates(est_q, est_x)
            steps[active] = env.t[active]
            reached = ev["reached_goal"] & active
            if np.any(reached):
                success[reached] = True
                reach_T[reached] = env.t[reached] / cfg.f_nn
                active[reached] = False
            failed = (ev["terminated"] | ev["truncated"]) & active
            active[failed] = False

        for i in range(b):
            T = float(reach_T[i]) if success[i] else None
            omega = theta0[i] / T if (success[i] and T and T > 0) else None
            is_speed = exp.mode == "speed_horizon"
            results.append(EpisodeResult(
                index=start + i,
                success=bool(success[i]),
                theta_0=float(theta0[i]),
                T=T,
                omega=omega,
                omega_d=float(omega_d[i]) if is_speed else None,
                target_time=float(theta0[i] / omega_d[i]) if is_speed else None,
                h_exp=float(h_exp[i]) if is_speed else None,
                dropped=bool(env.dropped[i]),
                steps=int(steps[i]),
            ))
    return results


# ---------------------------------------------------------------------------
# filters, statistics, exports
# ---------------------------------------------------------------------------

def filter_episodes(results: list[EpisodeResult], min_theta_0: float = 0.0,
                    drop_failures: bool = False) -> tuple[list[EpisodeResult], dict]:
    kept = [r for r in results
            if r.theta_0 >= min_theta_0 and (r.success or not drop_failures)]
    info = {
        "n_input": len(results),
        "n_retained": len(kept),
        "discarded_fraction": 1.0 - len(kept) / len(results) if results else 0.0,
    }
    return kept, info


def spearman_rank(x, y) -> float:
    """Spearman correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        return float("nan")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.sum(rx**2) * np.sum(ry**2))
    return float(np.sum(rx * ry) / denom) if denom > 0 else float("nan")


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    sv = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _group_key(r: EpisodeResult, grouping: str):
    if grouping == "by_rounded_Td":
        # round-half-to-even, matching the plotting convention
        return int(round(r.target_time)) if r.target_time is not None else None
    if grouping == "by_omega_d_bucket":
        if r.omega_d is None:
            return None
        return 0.5 * np.floor(r.omega_d / 0.5) + 0.25
    return "all"


def summarize(all_results: list[EpisodeResult], retained: list[EpisodeResult],
              grouping: str = "none") -> MetricsReport:
    """Group statistics over retained episodes plus pre-filter bookkeeping."""
    if not retained:
        raise ConfigError("no retained episodes to summarize")
    n = len(all_results)
    n_success = sum(r.success for r in all_results)

    groups: dict = {}
    for r in retained:
        key = _group_key(r, grouping)
        if key is None:
            continue
        groups.setdefault(key, []).append(r)

    stats = []
    for key in sorted(groups, key=lambda k: (str(type(k)), k)):
        rs = [r for r in groups[key] if r.omega is not None]
        if not rs:
            print(f"warning: group {key!r} has no successful episodes; omitted")
            continue
        Ts = np.array([r.T for r in rs])
        oms = np.array([r.omega for r in rs])
        stats.append(GroupStats(
            key=key, count=len(rs),
            mean_T=float(Ts.mean()), std_T=float(Ts.std()),
            median_T=float(np.median(Ts)),
            p5_T=float(np.percentile(Ts, 5)), p95_T=float(np.percentile(Ts, 95)),
            mean_omega=float(oms.mean()), std_omega=float(oms.std()),
            median_omega=float(np.median(oms)),
            p5_omega=float(np.percentile(oms, 5)), p95_omega=float(np.percentile(oms, 95)),
        ))

    pairs = [(r.T, r.target_time) for r in retained
             if r.T is not None and r.target_time is not None]
    rho = spearman_rank([p[0] for p in pairs], [p[1] for p in pairs]) if len(pairs) >= 2 else None

    return MetricsReport(
        n_episodes=n, n_success=n_success,
        success_rate=n_success / n if n else float("nan"),
        n_retained=len(retained),
        discarded_fraction=1.0 - len(retained) / n if n else 0.0,
        grouping=grouping, groups=stats, spearman_T_Td=rho,
    )


EPISODE_COLUMNS = ["index", "success", "theta_0", "T", "omega", "omega_d",
                   "target_time", "h_exp", "dropped", "steps"]
GROUP_COLUMNS = ["group", "count", "mean_T", "std_T", "median_T", "p5_T", "p95_T",
                 "mean_omega", "std_omega", "median_omega", "p5_omega", "p95_omega"]


def write_reports(out_dir, exp: ExperimentConfig, all_results, retained,
                  report: MetricsReport, eval_meta: dict):
    """episodes.csv, groups.csv, scatter.csv, report.json under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(exp.to_dict())
    comments = [f"config_hash={chash}", f"commit={git_commit()}"]

    write_csv(out_dir / "episodes.csv", EPISODE_COLUMNS,
              [[r.index, r.success, r.theta_0, r.T, r.omega, r.omega_d,
                r.target_time, r.h_exp, r.dropped, r.steps] for r in all_results],
              comments)
    write_csv(out_dir / "groups.csv", GROUP_COLUMNS,
              [[g.key, g.count, g.mean_T, g.std_T, g.median_T, g.p5_T, g.p95_T,
                g.mean_omega, g.std_omega, g.median_omega, g.p5_omega, g.p95_omega]
               for g in report.groups],
              comments)
    write_csv(out_dir / "scatter.csv", ["omega_d", "omega", "theta_0"],
              [[r.omega_d, r.omega, r.theta_0] for r in retained if r.omega is not None],
              comments)

    doc = {
        "config_hash": chash,
        "commit": git_commit(),
        "eval": eval_meta,
        "summary": {
            "n_episodes": report.n_episodes,
            "n_success": report.n_success,
            "success_rate": report.success_rate,
            "n_retained": report.n_retained,
            "discarded_fraction": report.discarded_fraction,
            "spearman_T_Td": report.spearman_T_Td,
            "grouping": report.grouping,
        },
        "groups": [{k: _plain(v) for k, v in g.__dict__.items()} for g in report.groups],
        "episodes": [{k: _plain(v) for k, v in r.__dict__.items()} for r in all_results],
    }
    (out_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return out_dir / "report.json"


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v
