"""Analytic surrogate for grasp-coupled in-hand reorientation.

The simulator keeps the incentive structure of the task without contact
physics:

* Joint targets are first-order low-pass filtered (time constant ``tau``)
  and tracked with a velocity/acceleration-limited proportional law. While
  the grasp is closed the tracking runs against a load factor, so contact
  state leaks into the control error and stays observable from
  proprioception alone.
* A fixed random coupling matrix maps realized joint velocity to object
  angular velocity (norm-capped: the grasp slips rather than spinning the
  object arbitrarily fast), and a drift matrix maps it to object position
  velocity. Rotations integrate exactly on SO(3) through the exponential
  map, one sub-step at a time.
* Opening the grasp freezes the object and exposes it to a per-sub-step
  drop hazard that grows with joint speed. Joint range is a hard box, so
  sustained rotation exhausts joint travel and forces either wind-up
  maneuvers or risky re-grasp openings: the downtime/risk analog of finger
  gaiting.

Episodes run at ``f_nn`` policy steps per second with ``f_z / f_nn``
internal sub-steps, which natively generates the stacked proprioceptive
observation window.

`VecReorientEnv` advances a batch of independent environments with
per-environment random streams derived from (seed, env index): serial and
vectorized execution produce identical trajectories. `ReorientEnv` is the
single-environment view used by most of the unit tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, UsageError
from .geometry import BasisPointSet, Cuboid, Pose, batched_encoding, default_basis_points
from .so3 import (
    Rotation,
    quat_canonical,
    quat_exp,
    quat_geodesic,
    quat_mul,
    quat_normalize,
    rotation_feature,
    quat_conj,
)

# scale applied to metric-valued observation entries so network inputs are O(1)
SHAPE_OBS_SCALE = 10.0

MODES = ("fixed_horizon", "speed_horizon")
SCHEMES = ("oracle", "coupled")
CONDITIONING = ("none", "speed", "time", "both")

# conditioning normalizers (keep the extra inputs O(1))
SPEED_XI_SCALE = 2.5   # rad/s
TIME_XI_SCALE = 10.0   # s
# the remaining-time input saturates one second past the deadline: training
# episodes never live longer than that, so deeper values would be
# out-of-distribution at evaluation time
TIME_XI_FLOOR = -0.1


def conditioning_dim(mode: str) -> int:
    return {"none": 0, "speed": 1, "time": 1, "both": 2}[mode]


def validate_law(law, name: str):
    """Sampling law: ("constant", value) or ("uniform", low, high)."""
    law = tuple(law)
    if law[0] == "constant" and len(law) == 2:
        return law
    if law[0] == "uniform" and len(law) == 3 and law[1] <= law[2]:
        return law
    raise ConfigError(f"{name} must be ('constant', v) or ('uniform', low, high), got {law!r}")


def draw_law(law, rng: np.random.Generator) -> float:
    if law[0] == "constant":
        return float(law[1])
    return float(rng.uniform(law[1], law[2]))


def build_xi(mode: str, omega_d: float, target_time: float, t: float) -> np.ndarray:
    """Conditioning inputs: target speed and/or remaining time, normalized."""
    if mode == "none":
        return np.zeros(0)
    if mode == "speed":
        return np.array([omega_d / SPEED_XI_SCALE])
    if mode == "time":
        return np.array([np.clip((target_time - t) / TIME_XI_SCALE, TIME_XI_FLOOR, 1.0)])
    if mode == "both":
        return np.array([omega_d / SPEED_XI_SCALE,
                         np.clip((target_time - t) / TIME_XI_SCALE, TIME_XI_FLOOR, 1.0)])
    raise ConfigError(f"unknown conditioning mode {mode!r}")


@dataclass
class DomainRandomization:
    enabled: bool = True
    coupling_jitter: float = 0.1   # per-episode elementwise +-10% on J and G
    obs_q_noise: float = 0.005     # rad, on observed joint angles

    def to_dict(self):
        return {"enabled": self.enabled, "coupling_jitter": self.coupling_jitter,
                "obs_q_noise": self.obs_q_noise}

    @staticmethod
    def from_dict(d):
        return DomainRandomization(**d)


@dataclass
class EnvConfig:
    f_nn: float = 20.0             # policy rate, Hz
    f_z: float = 60.0              # observation sampling rate, Hz
    tau: float = 0.2               # action filter time constant, s
    k: int = 6                     # observation stack depth
    n_joints: int = 12
    joint_limit: float = 1.0       # rad about the home configuration
    v_joint_max: float = 9.6       # rad/s
    a_joint_max: float = 110.0     # rad/s^2
    track_gain: float = 40.0       # 1/s, proportional joint tracking
    grasp_load: float = 0.8        # tracking speed factor while the grasp is closed
    success_threshold: float = 0.4  # rad
    timeout: float = 20.0          # s
    drop_radius: float = 0.03      # m
    regrasp_hazard: float = 0.02   # base drop probability per open sub-step
    coupling_matrix_scale: float = 0.435
    drift_matrix_scale: float = 0.004
    object_speed_cap: float = 3.0  # rad/s, grasp slip limit
    matrix_seed: int = 0
    fixed_horizon: float = 5.0     # s, horizon in fixed_horizon mode
    init_q_noise: float = 0.02     # rad, on initial joint angles
    half_extents: tuple = (0.025, 0.035, 0.05)
    basis_count: int = 32
    basis_radius: float = 0.06
    domain_randomization: DomainRandomization = field(default_factory=DomainRandomization)

    def validate(self) -> "EnvConfig":
        for name in ("f_nn", "f_z", "tau", "joint_limit", "v_joint_max", "a_joint_max",
                     "track_gain", "success_threshold", "timeout", "drop_radius"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"env.{name} must be positive")
        ratio = self.f_z / self.f_nn
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("env.f_z must be an integer multiple of env.f_nn")
        if self.k < 1:
            raise ConfigError("env.k must be at least 1")
        if not 0.0 <= self.regrasp_hazard < 1.0:
            raise ConfigError("env.regrasp_hazard must be a probability")
        if not 0.0 < self.grasp_load <= 1.0:
            raise ConfigError("env.grasp_load must be in (0, 1]")
        Cuboid(np.asarray(self.half_extents))  # raises on bad shape
        return self

    @property
    def n_sub(self) -> int:
        return int(round(self.f_z / self.f_nn))

    @property
    def timeout_steps(self) -> int:
        return int(round(self.timeout * self.f_nn))

    def shape(self) -> Cuboid:
        return Cuboid(np.asarray(self.half_extents, dtype=np.float64))

    def basis(self) -> BasisPointSet:
        return default_basis_points(self.basis_count, self.basis_radius)

    def coupling_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """The fixed (J, G) pair mapping joint velocity to object motion."""
        rj = np.random.default_rng(np.random.SeedSequence([self.matrix_seed, 11]))
        rg = np.random.default_rng(np.random.SeedSequence([self.matrix_seed, 12]))
        J = self.coupling_matrix_scale * rj.normal(size=(3, self.n_joints))
        G = self.drift_matrix_scale * rg.normal(size=(3, self.n_joints))
        return J, G

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "domain_randomization"}
        d["half_extents"] = list(self.half_extents)
        d["domain_randomization"] = self.domain_randomization.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "EnvConfig":
        d = dict(d)
        dr = d.pop("domain_randomization", None)
        known = {f for f in EnvConfig.__dataclass_fields__ if f != "domain_randomization"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown env config fields: {sorted(unknown)}")
        if "half_extents" in d:
            d["half_extents"] = tuple(d["half_extents"])
        cfg = EnvConfig(**d)
        if dr is not None:
            cfg.domain_randomization = DomainRandomization.from_dict(dr)
        return cfg.validate()


@dataclass
class Action:
    """Policy output: 12 relative joint targets plus the grasp gate."""

    joint_target_delta: np.ndarray
    grasp_gate: float

    def clamped(self) -> "Action":
        return Action(np.clip(np.asarray(self.joint_target_delta, dtype=np.float64), -1, 1),
                      float(np.clip(self.grasp_gate, -1, 1)))

    def as_vector(self) -> np.ndarray:
        a = self.clamped()
        return np.concatenate([a.joint_target_delta, [a.grasp_gate]])


@dataclass
class Observation:
    """What the policy sees: proprioceptive stack, goal feature, shape, xi."""

    z: np.ndarray               # (k, 2 * n_joints), newest first: rows (q, e)
    goal_feature: np.ndarray    # (6,)
    shape_encoding: np.ndarray  # (N_b, 3), meters
    xi: np.ndarray              # (0..2,)

    def vector(self) -> np.ndarray:
        return np.concatenate([
            self.z.reshape(-1),
            self.goal_feature,
            self.shape_encoding.reshape(-1) * SHAPE_OBS_SCALE,
            self.xi,
        ])


@dataclass
class StepEvents:
    reached_goal: bool
    goal_resampled: bool
    dropped: bool
    truncated: bool
    terminated: bool
    theta_t: float
    theta_prev: float
    delta_x_t: float
    delta_x_prev: float
    q_penalty_input: np.ndarray
    in_goal: bool


@dataclass
class EnvState:
    """Full simulator state for one environment."""

    q: np.ndarray
    q_d: np.ndarray
    object: Pose
    goal: Rotation
    grasp_open: bool
    t: int
    theta_0: float
    x_0: np.ndarray
    horizon: int
    target_time: float
    omega_d: float
    dropped: bool


class VecReorientEnv:
    """Batch of independent surrogate environments advanced in lock-step."""

    def __init__(self, config: EnvConfig, n_envs: int, seed: int,
                 mode: str = "fixed_horizon", scheme: str = "oracle",
                 conditioning: str = "none", eval_mode: bool = False,
                 omega_law=("uniform", 0.25, 2.5), h_exp_law=("constant", 0.0),
                 index_offset: int = 0):
        config.validate()
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if conditioning not in CONDITIONING:
            raise ConfigError(f"conditioning must be one of {CONDITIONING}")
        if conditioning != "none" and mode != "speed_horizon":
            raise ConfigError("speed/time conditioning requires speed_horizon mode")
        self.cfg = config
        self.n = n_envs
        self.mode = mode
        self.scheme = scheme
        self.conditioning = conditioning
        self.eval_mode = eval_mode
        self.omega_law = validate_law(omega_law, "omega_d_law")
        self.h_exp_law = validate_law(h_exp_law, "h_exp_law")

        self.rngs = [np.random.default_rng(np.random.SeedSequence([seed, index_offset + i]))
                     for i in range(n_envs)]

        nj = config.n_joints
        self.J, self.G = config.coupling_matrices()
        self.J_ep = np.broadcast_to(self.J, (n_envs, 3, nj)).copy()
        self.G_ep = np.broadcast_to(self.G, (n_envs, 3, nj)).copy()
        self.basis_points = config.basis().points
        self.half = config.shape().half_extents
        self.q_home = np.zeros(nj)

        self.dt = 1.0 / config.f_z
        self.alpha_f = 1.0 - math.exp(-self.dt / config.tau)

        # state arrays
        self.q = np.zeros((n_envs, nj))
        self.q_d = np.zeros((n_envs, nj))
        self.v = np.zeros((n_envs, nj))
        self.obj_q = np.tile([1.0, 0, 0, 0], (n_envs, 1))
        self.obj_x = np.zeros((n_envs, 3))
        self.goal_q = np.tile([1.0, 0, 0, 0], (n_envs, 1))
        self.x0 = np.zeros((n_envs, 3))
        self.theta0 = np.zeros(n_envs)
        self.theta = np.zeros(n_envs)
        self.dx = np.zeros(n_envs)
        self.grasp_open = np.zeros(n_envs, dtype=bool)
        self.t = np.zeros(n_envs, dtype=np.int64)
        self.horizon = np.zeros(n_envs, dtype=np.int64)
        self.target_time = np.zeros(n_envs)
        self.omega_d = np.zeros(n_envs)
        self.h_exp = np.zeros(n_envs)
        self.dropped = np.zeros(n_envs, dtype=bool)
        self.done = np.zeros(n_envs, dtype=bool)
        self.reached_in_segment = np.zeros(n_envs, dtype=bool)
        self.first_reach_step = np.full(n_envs, -1, dtype=np.int64)
        self.zbuf = np.zeros((n_envs, config.k, 2 * nj))
        # pose source for the policy features in the coupled scheme
        self.est_q = self.obj_q.copy()
        self.est_x = self.obj_x.copy()

    # -- lifecycle ----------------------------------------------------------

    def reset_all(self, omega_d=None, h_exp=None):
        self.reset_where(np.ones(self.n, dtype=bool), omega_d, h_exp)

    def reset_where(self, mask: np.ndarray, omega_d=None, h_exp=None):
        """Re-initialize the masked environments from their own streams.

        omega_d / h_exp override the configured sampling laws when given
        (scalar or per-env array).
        """
        cfg = self.cfg
        idx = np.flatnonzero(mask)
        for i in idx:
            rng = self.rngs[i]
            self.obj_q[i] = quat_canonical(quat_normalize(rng.normal(size=4)))
            self.goal_q[i] = quat_canonical(quat_normalize(rng.normal(size=4)))
            self.q[i] = self.q_home + rng.normal(0.0, cfg.init_q_noise, cfg.n_joints)
            if cfg.domain_randomization.enabled:
                jit = cfg.domain_randomization.coupling_jitter
                self.J_ep[i] = self.J * (1.0 + jit * rng.uniform(-1, 1, self.J.shape))
                self.G_ep[i] = self.G * (1.0 + jit * rng.uniform(-1, 1, self.G.shape))
            else:
                self.J_ep[i] = self.J
                self.G_ep[i] = self.G
            if self.mode == "speed_horizon":
                if omega_d is None:
                    w = draw_law(self.omega_law, rng)
                else:
                    w = float(omega_d if np.isscalar(omega_d) else omega_d[i])
                if h_exp is None:
                    he = draw_law(self.h_exp_law, rng)
                else:
                    he = float(h_exp if np.isscalar(h_exp) else h_exp[i])
                self.omega_d[i] = w
                self.h_exp[i] = he
            else:
                self.omega_d[i] = 0.0
                self.h_exp[i] = 0.0

        self.q_d[idx] = self.q[idx]
        self.v[idx] = 0.0
        self.obj_x[idx] = 0.0
        self.x0[idx] = self.obj_x[idx]
        self.t[idx] = 0
        self.grasp_open[idx] = False
        self.dropped[idx] = False
        self.done[idx] = False
        self.reached_in_segment[idx] = False
        self.first_reach_step[idx] = -1
        self.dx[idx] = 0.0
        self.theta0[idx] = quat_geodesic(self.goal_q[idx], self.obj_q[idx])
        self.theta[idx] = self.theta0[idx]
        self._set_horizon(idx)
        # back-fill the observation stack with the initial sample and zero error
        for i in idx:
            q_obs = self._observe_q(i)
            row = np.concatenate([q_obs, np.zeros(self.cfg.n_joints)])
            self.zbuf[i, :, :] = row[None, :]
        # the estimator is seeded from the known initial pose
        self.est_q[idx] = self.obj_q[idx]
        self.est_x[idx] = self.obj_x[idx]

    def _set_horizon(self, idx):
        cfg = self.cfg
        if self.mode == "fixed_horizon":
            self.target_time[idx] = cfg.fixed_horizon
            self.horizon[idx] = self.t[idx] + int(round(cfg.fixed_horizon * cfg.f_nn))
        else:
            td = self.theta[idx] / self.omega_d[idx]
            self.target_time[idx] = self.t[idx] / cfg.f_nn + td
            self.horizon[idx] = self.t[idx] + np.round((td + self.h_exp[idx]) * cfg.f_nn).astype(np.int64)

    def _observe_q(self, i: int) -> np.ndarray:
        dr = self.cfg.domain_randomization
        if dr.enabled and dr.obs_q_noise > 0:
            return self.q[i] + self.rngs[i].normal(0.0, dr.obs_q_noise, self.cfg.n_joints)
        return self.q[i].copy()

    # -- pose source for policy features -------------------------------------

    def set_pose_estimates(self, quats: np.ndarray, positions: np.ndarray):
        if self.scheme != "coupled":
            raise UsageError("pose estimates are only consumed in the coupled scheme")
        self.est_q = np.asarray(quats, dtype=np.float64).reshape(self.n, 4)
        self.est_x = np.asarray(positions, dtype=np.float64).reshape(self.n, 3)

    def _feature_pose(self) -> tuple[np.ndarray, np.ndarray]:
        if self.scheme == "coupled":
            return self.est_q, self.est_x
        return self.obj_q, self.obj_x

    # -- observations ---------------------------------------------------------

    def observation_vectors(self) -> np.ndarray:
        """Flat policy inputs, one row per environment."""
        pq, px = self._feature_pose()
        rel = quat_mul(self.goal_q, quat_conj(pq))
        feat = rotation_feature(quat_normalize(rel))
        enc = batched_encoding(pq, px, self.half, self.basis_points) * SHAPE_OBS_SCALE
        parts = [self.zbuf.reshape(self.n, -1), feat, enc]
        d = conditioning_dim(self.conditioning)
        if d:
            xi = np.zeros((self.n, d))
            tsec = self.t / self.cfg.f_nn
            if self.conditioning in ("speed", "both"):
                xi[:, 0] = self.omega_d / SPEED_XI_SCALE
            if self.conditioning in ("time", "both"):
                xi[:, -1] = np.clip((self.target_time - tsec) / TIME_XI_SCALE,
                                    TIME_XI_FLOOR, 1.0)
            parts.append(xi)
        return np.concatenate(parts, axis=1)

    def estimator_inputs(self) -> np.ndarray:
        """Inputs for the pose estimator: z stack (plus explicit joint-angle
        differences) and the shape encoding at the previous estimate."""
        from .estimator import assemble_inputs
        enc = batched_encoding(self.est_q, self.est_x, self.half, self.basis_points)
        return assemble_inputs(self.zbuf.reshape(self.n, -1), enc * SHAPE_OBS_SCALE,
                               self.cfg.k, self.cfg.n_joints)

    def shape_encoder(self, quats: np.ndarray, positions: np.ndarray) -> np.ndarray:
        """Shape encoding in observation units for arbitrary poses."""
        return batched_encoding(quats, positions, self.half, self.basis_points) * SHAPE_OBS_SCALE

    @property
    def obs_dim(self) -> int:
        return (self.cfg.k * 2 * self.cfg.n_joints + 6 + 3 * self.cfg.basis_count
                + conditioning_dim(self.conditioning))

    @property
    def estimator_input_dim(self) -> int:
        from .estimator import estimator_input_dim
        return estimator_input_dim(self.cfg.k, self.cfg.n_joints, self.cfg.basis_count)

    # -- dynamics -------------------------------------------------------------

    def step(self, actions: np.ndarray, mask: Optional[np.ndarray] = None) -> dict:
        """Advance masked environments by one policy step.

        Returns a dict of per-environment arrays; entries for unmasked
        environments are zero-filled and must be ignored by the caller.
        """
        cfg = self.cfg
        n, nj = self.n, cfg.n_joints
        if mask is None:
            mask = ~self.done
        if np.any(self.done & mask):
            raise UsageError("stepping an environment whose episode already ended")
        a = np.clip(np.asarray(actions, dtype=np.float64).reshape(n, -1), -1.0, 1.0)
        target = self.q_home[None, :] + a[:, :nj] * cfg.joint_limit
        self.grasp_open = np.where(mask, a[:, nj] > 0.0, self.grasp_open)

        theta_prev = self.theta.copy()
        dx_prev = self.dx.copy()

        act = np.flatnonzero(mask)
        closed = ~self.grasp_open
        vmax, amax, dt = cfg.v_joint_max, cfg.a_joint_max, self.dt
        lo, hi = self.q_home - cfg.joint_limit, self.q_home + cfg.joint_limit
        hazard_dropped = np.zeros(n, dtype=bool)

        # pre-draw per-env observation noise for all sub-steps (stream order
        # per env: noise block first, then any hazard draws)
        dr = cfg.domain_randomization
        noisy = dr.enabled and dr.obs_q_noise > 0
        if noisy:
            noise = np.stack([self.rngs[i].normal(0.0, dr.obs_q_noise, (cfg.n_sub, nj))
                              for i in act])

        for s in range(cfg.n_sub):
            qd = self.q_d[act] + self.alpha_f * (target[act] - self.q_d[act])
            v_des = np.clip(cfg.track_gain * (qd - self.q[act]), -vmax, vmax)
            v_des[closed[act]] *= cfg.grasp_load
            v = self.v[act] + np.clip(v_des - self.v[act], -amax * dt, amax * dt)
            q_new = np.clip(self.q[act] + v * dt, lo, hi)
            v_real = (q_new - self.q[act]) / dt
            dq = q_new - self.q[act]
            self.q_d[act] = qd
            self.q[act] = q_new
            self.v[act] = v_real

            # object motion while the grasp is closed, capped at the slip limit
            cl = act[closed[act]]
            if len(cl):
                dq_cl = dq[closed[act]]
                omega = np.einsum("nij,nj->ni", self.J_ep[cl], dq_cl) / dt
                speed = np.linalg.norm(omega, axis=1)
                scale = np.where(speed > cfg.object_speed_cap,
                                 cfg.object_speed_cap / np.where(speed == 0, 1.0, speed), 1.0)
                omega *= scale[:, None]
                self.obj_q[cl] = quat_normalize(quat_mul(quat_exp(omega * dt), self.obj_q[cl]))
                self.obj_x[cl] += np.einsum("nij,nj->ni", self.G_ep[cl], dq_cl)

            # drop hazard while open, scaled by joint speed (rms norm)
            op = act[self.grasp_open[act] & ~self.dropped[act]]
            if len(op):
                p = cfg.regrasp_hazard * (
                    1.0 + np.sqrt(np.mean(self.v[op] ** 2, axis=1)) / vmax)
                for j, i in enumerate(op):
                    if self.rngs[i].uniform() < p[j]:
                        self.dropped[i] = True
                        hazard_dropped[i] = True

            # record (q, e) into the stack, newest first
            self.zbuf[act, 1:, :] = self.zbuf[act, :-1, :]
            q_obs = self.q[act] + noise[:, s] if noisy else self.q[act]
            self.zbuf[act, 0, :nj] = q_obs
            self.zbuf[act, 0, nj:] = self.q_d[act] - q_obs

        self.t[act] += 1
        self.theta[act] = quat_geodesic(self.goal_q[act], self.obj_q[act])
        self.dx[act] = np.linalg.norm(self.obj_x[act] - self.x0[act], axis=1)

        theta_for_reward = self.theta.copy()
        in_goal = self.theta < cfg.success_threshold

        reached_now = np.zeros(n, dtype=bool)
        newly = mask & in_goal & ~self.reached_in_segment
        reached_now[newly] = True
        self.reached_in_segment |= newly
        first = newly & (self.first_reach_step < 0)
        self.first_reach_step[first] = self.t[first]

        # positional drop
        drift_drop = mask & (self.dx > cfg.drop_radius) & ~self.dropped
        self.dropped |= drift_drop
        terminated = mask & self.dropped

        goal_resampled = np.zeros(n, dtype=bool)
        segment_ended = np.zeros(n, dtype=bool)
        segment_success = np.zeros(n, dtype=bool)
        if not self.eval_mode:
            at_deadline = mask & (self.t == self.horizon) & ~terminated
            ok = at_deadline & in_goal
            fail = at_deadline & ~in_goal
            segment_ended |= at_deadline
            segment_success |= ok
            terminated |= fail
            idx = np.flatnonzero(ok)
            for i in idx:
                self.goal_q[i] = quat_canonical(quat_normalize(self.rngs[i].normal(size=4)))
            if len(idx):
                self.theta0[idx] = quat_geodesic(self.goal_q[idx], self.obj_q[idx])
                self.theta[idx] = self.theta0[idx]
                self.reached_in_segment[idx] = self.theta[idx] < cfg.success_threshold
                self._set_horizon(idx)
                goal_resampled[idx] = True
        segment_ended |= mask & self.dropped

        truncated = mask & (self.t >= cfg.timeout_steps) & ~terminated
        self.done |= terminated | truncated

        return {
            "theta_prev": theta_prev,
            "theta_t": theta_for_reward,
            "delta_x_prev": dx_prev,
            "delta_x_t": self.dx.copy(),
            "q": self.q.copy(),
            "in_goal": in_goal & mask,
            "reached_goal": reached_now,
            "goal_resampled": goal_resampled,
            "dropped": self.dropped & mask,
            "hazard_dropped": hazard_dropped,
            "terminated": terminated,
            "truncated": truncated,
            "segment_ended": segment_ended,
            "segment_success": segment_success,
            "mask": mask,
        }

    # -- single-env convenience ----------------------------------------------

    def state_of(self, i: int) -> EnvState:
        return EnvState(
            q=self.q[i].copy(),
            q_d=self.q_d[i].copy(),
            object=Pose(self.obj_x[i].copy(), Rotation.from_quat(self.obj_q[i])),
            goal=Rotation.from_quat(self.goal_q[i]),
            grasp_open=bool(self.grasp_open[i]),
            t=int(self.t[i]),
            theta_0=float(self.theta0[i]),
            x_0=self.x0[i].copy(),
            horizon=int(self.horizon[i]),
            target_time=float(self.target_time[i]),
            omega_d=float(self.omega_d[i]),
            dropped=bool(self.dropped[i]),
        )

    def observation_of(self, i: int) -> Observation:
        pq, px = self._feature_pose()
        rel = quat_normalize(quat_mul(self.goal_q[i], quat_conj(pq[i])))
        enc = batched_encoding(pq[i:i + 1], px[i:i + 1], self.half, self.basis_points)
        xi = build_xi(self.conditioning, float(self.omega_d[i]), float(self.target_time[i]),
                      float(self.t[i] / self.cfg.f_nn)) if self.conditioning != "none" \
            else np.zeros(0)
        return Observation(
            z=self.zbuf[i].copy(),
            goal_feature=rotation_feature(rel),
            shape_encoding=enc.reshape(-1, 3) / 1.0,
            xi=xi,
        )


class ReorientEnv:
    """Single-environment API over the vectorized core."""

    def __init__(self, config: EnvConfig, seed: int = 0, mode: str = "fixed_horizon",
                 scheme: str = "oracle", conditioning: str = "none", eval_mode: bool = False):
        self.vec = VecReorientEnv(config, 1, seed, mode=mode, scheme=scheme,
                                  conditioning=conditioning, eval_mode=eval_mode)

    @property
    def cfg(self) -> EnvConfig:
        return self.vec.cfg

    def reset(self, omega_d: float | None = None, h_exp: float = 0.0):
        if self.vec.mode == "speed_horizon":
            if omega_d is not None and not 0.25 <= omega_d <= 2.5:
                raise ConfigError("omega_d must lie in [0.25, 2.5] rad/s")
            self.vec.reset_all(omega_d=omega_d, h_exp=h_exp)
        else:
            self.vec.reset_all()
        return self.vec.state_of(0), self.vec.observation_of(0)

    def step(self, action: Action):
        if self.vec.done[0]:
            raise UsageError("episode already ended; reset before stepping")
        ev = self.vec.step(action.as_vector().reshape(1, -1))
        events = StepEvents(
            reached_goal=bool(ev["reached_goal"][0]),
            goal_resampled=bool(ev["goal_resampled"][0]),
            dropped=bool(ev["dropped"][0]),
            truncated=bool(ev["truncated"][0]),
            terminated=bool(ev["terminated"][0]),
            theta_t=float(ev["theta_t"][0]),
            theta_prev=float(ev["theta_prev"][0]),
            delta_x_t=float(ev["delta_x_t"][0]),
            delta_x_prev=float(ev["delta_x_prev"][0]),
            q_penalty_input=ev["q"][0],
            in_goal=bool(ev["in_goal"][0]),
        )
        return self.vec.state_of(0), self.vec.observation_of(0), events

    def observation_window(self) -> Observation:
        return self.vec.observation_of(0)
