"""Command-line entry point.

Commands: train, eval, sweep, goal-set, inspect. Exit codes: 0 ok,
2 configuration error, 3 compatibility error, 4 numerical failure.
Output root defaults to ./out and can be moved with GAITSPEED_OUT.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, ppo
from .config import ExperimentConfig
from .errors import CompatibilityError, ConfigError, GaitspeedError, NumericalError
from .io_utils import config_hash, git_commit, write_csv
from .so3 import discretized_goal_set


def out_root() -> Path:
    return Path(os.environ.get("GAITSPEED_OUT", "out"))


def cmd_train(args) -> int:
    exp = ExperimentConfig.load(args.config, args.override)
    seed = args.seed if args.seed is not None else exp.seeds[0]
    out_dir = Path(args.out) if args.out else out_root() / exp.name / f"seed{seed}"
    result = ppo.train(exp, seed, out_dir)
    print(f"done: checkpoint={result['checkpoint']} "
          f"final_success={result['final_success']:.3f} "
          f"wall={result['wall_seconds']:.1f}s")
    return 0


def _eval_laws(args, exp):
    omega_law = None
    if args.fixed_omega is not None:
        omega_law = ("constant", args.fixed_omega)
    elif args.uniform_omega:
        omega_law = ("uniform", args.uniform_omega[0], args.uniform_omega[1])
    h_law = ("constant", args.h_exp) if args.h_exp is not None else None
    return omega_law, h_law


def cmd_eval(args) -> int:
    bundle = evaluation.load_bundle(args.run)
    if args.scheme and args.scheme != bundle.exp.scheme:
        raise CompatibilityError(
            f"checkpoint was trained with scheme {bundle.exp.scheme!r}; "
            f"evaluating it as {args.scheme!r} is not allowed")
    exp = bundle.exp
    spec = exp.eval
    n_episodes = args.episodes or spec.n_episodes
    seed = args.seed if args.seed is not None else spec.seed
    omega_law, h_law = _eval_laws(args, exp)
    min_theta = args.min_theta0 if args.min_theta0 is not None else spec.min_theta_0
    grouping = args.grouping or spec.grouping
    stochastic = not args.deterministic if args.deterministic is not None else spec.stochastic

    results = evaluation.run_eval(bundle, n_episodes, seed,
                                  omega_d_law=omega_law, h_exp_law=h_law,
                                  stochastic=stochastic, batch_size=spec.batch_size)
    retained, info = evaluation.filter_episodes(results, min_theta_0=min_theta,
                                                drop_failures=not args.keep_failures)
    report = evaluation.summarize(results, retained, grouping)
    out_dir = Path(args.out) if args.out else Path(args.run) / "eval"
    meta = {"n_episodes": n_episodes, "seed": seed, "min_theta_0": min_theta,
            "drop_failures": not args.keep_failures, "stochastic": stochastic,
            "filter": info}
    evaluation.write_reports(out_dir, exp, results, retained, report, meta)
    print(f"evaluated {n_episodes} episodes: success_rate={report.success_rate:.3f} "
          f"retained={report.n_retained} reports under {out_dir}")
    return 0


def _run_arm(payload) -> dict:
    """Worker for sweep arms; must stay importable for process pools."""
    config_path, overrides, seed, out_dir, name = payload
    try:
        exp = ExperimentConfig.load(config_path, overrides)
        exp.name = name
        result = ppo.train(exp, seed, out_dir)
        return {"name": name, "seed": seed, "status": "ok",
                "out_dir": str(out_dir), "final_success": result["final_success"]}
    except Exception as e:  # partial failure must not sink the sweep
        return {"name": name, "seed": seed, "status": "failed",
                "out_dir": str(out_dir), "error": f"{type(e).__name__}: {e}"}


def cmd_sweep(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise ConfigError(f"sweep spec {spec_path} does not exist")
    spec = json.loads(spec_path.read_text())
    arms = spec.get("arms", [])
    if not arms:
        raise ConfigError("sweep spec lists no arms")
    base = spec.get("base_config")
    if base is None:
        raise ConfigError("sweep spec needs a base_config path")
    base = (spec_path.parent / base).resolve() if not Path(base).is_absolute() else Path(base)
    seeds = spec.get("seeds", [1, 2, 3])
    sweep_name = spec.get("name", spec_path.stem)
    root = Path(args.out) if args.out else out_root() / sweep_name

    jobs = []
    for arm in arms:
        if "name" not in arm:
            raise ConfigError("every sweep arm needs a name")
        for seed in seeds:
            out_dir = root / arm["name"] / f"seed{seed}"
            jobs.append((str(base), list(arm.get("overrides", [])), int(seed),
                         str(out_dir), arm["name"]))

    workers = args.workers or max(1, (os.cpu_count() or 2) // 2)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            statuses = list(pool.map(_run_arm, jobs))
    else:
        statuses = [_run_arm(j) for j in jobs]

    summary = {"sweep": sweep_name, "config_hash_base": config_hash(json.loads(Path(base).read_text())),
               "commit": git_commit(), "jobs": statuses}
    root.mkdir(parents=True, exist_ok=True)
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_combined_curves(root, arms, seeds)

    failed = [s for s in statuses if s["status"] != "ok"]
    print(f"sweep complete: {len(statuses) - len(failed)}/{len(statuses)} jobs ok; "
          f"summary under {root}")
    for s in failed:
        print(f"  failed: {s['name']} seed={s['seed']}: {s['error']}")
    return 0


def _write_combined_curves(root: Path, arms, seeds):
    """Per-arm min/mean/max training curves across seeds."""
    rows = []
    for arm in arms:
        per_seed = []
        for seed in seeds:
            path = root / arm["name"] / f"seed{seed}" / "curves.csv"
            if not path.exists():
                continue
            data = _read_curves_csv(path)
            if data is not None:
                per_seed.append(data)
        if not per_seed:
            continue
        n = min(len(d["update"]) for d in per_seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN rows early in training
            for i in range(n):
                b = [d["success_rate"][i] for d in per_seed]
                t = [d["mean_T"][i] for d in per_seed]
                rows.append([arm["name"], int(per_seed[0]["update"][i]),
                             int(per_seed[0]["env_steps"][i]),
                             float(np.nanmin(b)), float(np.nanmean(b)), float(np.nanmax(b)),
                             float(np.nanmin(t)), float(np.nanmean(t)), float(np.nanmax(t))])
    if rows:
        write_csv(root / "combined_curves.csv",
                  ["arm", "update", "env_steps", "b_min", "b_mean", "b_max",
                   "T_min", "T_mean", "T_max"],
                  rows, [f"commit={git_commit()}"])


def _read_curves_csv(path: Path):
    lines = [l for l in path.read_text().splitlines() if l and not l.startswith("#")]
    if len(lines) < 2:
        return None
    cols = lines[0].split(",")
    data = {c: [] for c in cols}
    for line in lines[1:]:
        for c, v in zip(cols, line.split(",")):
            data[c].append(float(v) if v not in ("", "True", "False") else np.nan)
    return data


def cmd_goal_set(args) -> int:
    step = math.radians(args.step_degrees)
    goals = discretized_goal_set(step)
    rows = [[i, g.w, g.x, g.y, g.z] for i, g in enumerate(goals)]
    if args.out:
        write_csv(args.out, ["index", "w", "x", "y", "z"], rows,
                  [f"step_degrees={args.step_degrees}", f"count={len(goals)}"])
        print(f"wrote {len(goals)} goals to {args.out}")
    else:
        print(f"# {len(goals)} goals at step {args.step_degrees} degrees")
        for r in rows:
            print(",".join(str(v) for v in r))
    return 0


def cmd_inspect(args) -> int:
    ckpt = Path(args.checkpoint)
    if (ckpt / "checkpoint").is_dir():
        ckpt = ckpt / "checkpoint"
    manifests = sorted(ckpt.glob("*.json"))
    if not manifests:
        raise ConfigError(f"no checkpoint manifests under {ckpt}")
    for m in manifests:
        print(f"== {m.name}")
        print(m.read_text().rstrip())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaitspeed",
                                description="Speed-adjustable in-hand reorientation lab")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one experiment arm")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None)
    t.add_argument("--override", action="append", default=[],
                   help="dotted-path config override, e.g. reward.lambda_bonus=10")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained checkpoint")
    e.add_argument("--run", required=True, help="training run directory")
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--scheme", choices=["oracle", "coupled"], default=None)
    e.add_argument("--fixed-omega", type=float, default=None)
    e.add_argument("--uniform-omega", type=float, nargs=2, default=None)
    e.add_argument("--h-exp", type=float, default=None)
    e.add_argument("--min-theta0", type=float, default=None)
    e.add_argument("--keep-failures", action="store_true")
    e.add_argument("--grouping", choices=["by_rounded_Td", "by_omega_d_bucket", "none"],
                   default=None)
    e.add_argument("--deterministic", action="store_true", default=None,
                   help="use mean actions instead of sampling")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run a sweep of arms x seeds")
    s.add_argument("--spec", required=True)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("goal-set", help="dump the discretized goal set")
    g.add_argument("--step-degrees", type=float, default=45.0)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_goal_set)

    i = sub.add_parser("inspect", help="print checkpoint manifests")
    i.add_argument("--checkpoint", required=True)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except CompatibilityError as e:
        print(f"compatibility error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4
    except GaitspeedError as e:
        print(f"error: {e}", file=sys.stderr)
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
