"""Recurrent proprioceptive pose estimator.

A single gated recurrent layer reads the stacked (q, e) window plus the
shape encoding rendered at the previous estimate, and a linear head emits a
pose *increment*: 3 position values and a 6-value rotation feature that is
orthonormalized and composed onto the previous estimate. Predicting
increments keeps the known initial pose exact at t = 0 and turns long-range
tracking into a chain of short-memory corrections, which is what a truncated
backpropagation window can actually learn.

Training is supervised on rollout buffers shared with the policy. Gradients
never flow into the policy; the policy merely consumes the estimates as part
of its observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimatorDivergenceError, UsageError
from .geometry import Pose
from .nets import Adam, FlatModule, GRUCell, orthogonal
from .so3 import (
    Rotation,
    matrix_to_quat,
    quat_geodesic,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
)

POS_DELTA_SCALE = 0.01   # meters of position change per unit head output
ROT_LOSS_WEIGHT = 1.0    # m^2 per rad^2 in the pose loss
IDENTITY_FEATURE = np.array([1.0, 0, 0, 0, 1, 0])
DIFF_FEATURE_SCALE = 5.0  # gain on explicit joint-angle differences


def diff_features(z_flat: np.ndarray, k: int, n_joints: int) -> np.ndarray:
    """Scaled first differences of the joint-angle part of the z stack.

    The pose increment is (to first order) linear in these differences, so
    handing them to the network directly saves it from learning a
    subtraction of nearly identical large inputs.
    """
    z = z_flat.reshape(*z_flat.shape[:-1], k, 2 * n_joints)
    q = z[..., :n_joints]
    d = (q[..., :-1, :] - q[..., 1:, :]) * DIFF_FEATURE_SCALE  # newest first
    return d.reshape(*z_flat.shape[:-1], (k - 1) * n_joints)


def estimator_input_dim(k: int, n_joints: int, basis_count: int) -> int:
    return k * 2 * n_joints + (k - 1) * n_joints + 3 * basis_count


def assemble_inputs(z_flat: np.ndarray, shape_enc: np.ndarray, k: int,
                    n_joints: int) -> np.ndarray:
    return np.concatenate([z_flat, diff_features(z_flat, k, n_joints), shape_enc], axis=-1)


@dataclass
class PoseEstimate:
    position: np.ndarray
    orientation: Rotation
    hidden: np.ndarray


@dataclass
class EstimatorCarry:
    """Recurrent state: hidden activations plus the running pose estimate."""

    hidden: np.ndarray
    quat: np.ndarray
    position: np.ndarray

    @staticmethod
    def from_initial_pose(pose: Pose, hidden_dim: int) -> "EstimatorCarry":
        return EstimatorCarry(np.zeros(hidden_dim), pose.orientation.as_quat(),
                              np.asarray(pose.position, dtype=np.float64).copy())


def gram_schmidt_6d(rot6: np.ndarray):
    """Orthonormalize a batch of 6-value features into rotation matrices.

    Returns (M, cache); the first column takes priority. Deterministic.
    """
    v1 = rot6[..., 0:3]
    v2 = rot6[..., 3:6]
    n1 = np.linalg.norm(v1, axis=-1, keepdims=True)
    a = v1 / n1
    s = np.sum(a * v2, axis=-1, keepdims=True)
    bp = v2 - s * a
    n2 = np.linalg.norm(bp, axis=-1, keepdims=True)
    b = bp / n2
    c = np.cross(a, b)
    M = np.stack([a, b, c], axis=-1)
    return M, (v1, v2, n1, a, s, bp, n2, b)


def gram_schmidt_6d_backward(cache, dM: np.ndarray) -> np.ndarray:
    """Backprop through gram_schmidt_6d; dM has shape (..., 3, 3)."""
    v1, v2, n1, a, s, bp, n2, b = cache
    da = dM[..., :, 0]
    db = dM[..., :, 1]
    dc = dM[..., :, 2]
    # c = a x b
    da = da + np.cross(b, dc)
    db = db + np.cross(dc, a)
    # b = bp / |bp|
    dbp = (db - np.sum(db * b, axis=-1, keepdims=True) * b) / n2
    # bp = v2 - s a, s = a . v2:  d(bp)/dv2 = I - a a^T,  d(bp)/da = -(s I + a v2^T)
    dv2 = dbp - np.sum(dbp * a, axis=-1, keepdims=True) * a
    da = da - s * dbp - np.sum(dbp * a, axis=-1, keepdims=True) * v2
    # a = v1 / |v1|
    dv1 = (da - np.sum(da * a, axis=-1, keepdims=True) * a) / n1
    return np.concatenate([dv1, dv2], axis=-1)


class PoseEstimator(FlatModule):
    """GRU + linear head emitting per-step pose increments."""

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim, self.hidden_dim = in_dim, hidden_dim
        self.cell = GRUCell(in_dim, hidden_dim, rng)
        for n, a in zip(self.cell._names, self.cell._arrays):
            self._register(f"cell.{n}", a)
        self.W_head = self._register("W_head", orthogonal(rng, 9, hidden_dim, 0.01))
        self.b_head = self._register("b_head", np.zeros(9))

    @property
    def architecture(self) -> dict:
        return {"kind": "recurrent_pose_estimator", "in_dim": self.in_dim,
                "hidden_dim": self.hidden_dim, "head_dim": 9}

    # -- forward -------------------------------------------------------------

    def head(self, h: np.ndarray) -> np.ndarray:
        return h @ self.W_head.T + self.b_head

    def deltas_from_head(self, out: np.ndarray):
        """Split head output into (position delta, rotation matrix, gs cache)."""
        dpos = out[..., :3] * POS_DELTA_SCALE
        rot6 = out[..., 3:] + IDENTITY_FEATURE
        M, cache = gram_schmidt_6d(rot6)
        return dpos, M, cache

    def step_batch(self, x: np.ndarray, h: np.ndarray, base_q: np.ndarray,
                   base_x: np.ndarray):
        """Advance a batch one step. Returns (est_q, est_x, h_new)."""
        h_new, _ = self.cell.forward(x, h)
        out = self.head(h_new)
        dpos, M, _ = self.deltas_from_head(out)
        dq = matrix_to_quat(M)
        est_q = quat_normalize(quat_mul(dq, base_q))
        est_x = base_x + dpos
        if not np.all(np.isfinite(h_new)):
            raise EstimatorDivergenceError("estimator carry became non-finite")
        return est_q, est_x, h_new

    def step(self, carry: EstimatorCarry, z: np.ndarray, shape_encoding: np.ndarray):
        """Single-environment step used by the public API and the tests.

        `z` is the (k, 2*n_joints) stack, `shape_encoding` the (N_b, 3)
        encoding rendered at the carry's pose (already scaled by the caller
        to observation units).
        """
        x = np.concatenate([np.asarray(z).reshape(-1),
                            np.asarray(shape_encoding).reshape(-1)])[None, :]
        est_q, est_x, h_new = self.step_batch(x, carry.hidden[None, :],
                                              carry.quat[None, :], carry.position[None, :])
        new_carry = EstimatorCarry(h_new[0], est_q[0], est_x[0])
        estimate = PoseEstimate(est_x[0].copy(), Rotation.from_quat(est_q[0]), h_new[0].copy())
        return estimate, new_carry

    # -- loss -----------------------------------------------------------------

    @staticmethod
    def pose_loss(est_q, est_x, true_q, true_x) -> np.ndarray:
        d = quat_geodesic(np.atleast_2d(est_q), np.atleast_2d(true_q))
        dx = np.atleast_2d(est_x) - np.atleast_2d(true_x)
        return np.sum(dx**2, axis=-1) + ROT_LOSS_WEIGHT * d**2

    def window_loss_and_grads(self, xs, h0, base_q, base_x, true_q, true_x):
        """Loss and parameter gradients over a TBPTT window.

        xs: (T, B, in_dim); h0: (B, hidden); base/true poses: (T, B, 4|3).
        The pose bases are rollout-time estimates and are treated as
        constants; gradients flow through the head and the recurrent chain.
        Returns (mean loss, grads dict).
        """
        T, B = xs.shape[0], xs.shape[1]
        h = h0
        caches = []
        douts = np.zeros((T, B, 9))
        total = 0.0
        base_M = quat_to_matrix(base_q)          # (T, B, 3, 3)
        true_M = quat_to_matrix(true_q)
        P = np.einsum("tbij,tbkj->tbik", base_M, true_M)   # base @ true^T
        for t in range(T):
            h, cache = self.cell.forward(xs[t], h)
            out = self.head(h)
            dpos, M, gs_cache = self.deltas_from_head(out)
            # position term
            ex = base_x[t] + dpos - true_x[t]
            total += float(np.sum(ex**2))
            dout = np.zeros((B, 9))
            dout[:, :3] = 2.0 * ex * POS_DELTA_SCALE
            # rotation term: d = arccos((tr(M @ P) - 1) / 2)
            c = 0.5 * (np.einsum("bij,bji->b", M, P[t]) - 1.0)
            c = np.clip(c, -1.0 + 1e-12, 1.0 - 1e-12)
            d = np.arccos(c)
            total += float(ROT_LOSS_WEIGHT * np.sum(d**2))
            sin_d = np.maximum(np.sin(d), 1e-9)
            dL_dM = (-ROT_LOSS_WEIGHT * (d / sin_d))[:, None, None] \
                * np.transpose(P[t], (0, 2, 1))
            dout[:, 3:] = gram_schmidt_6d_backward(gs_cache, dL_dM)
            douts[t] = dout
            caches.append((cache, h))

        grads = self.zero_grads()
        cell_grads = {n: grads[f"cell.{n}"] for n in self.cell._names}
        dh = np.zeros_like(h0)
        for t in range(T - 1, -1, -1):
            cache, h_t = caches[t]
            dh_total = dh + douts[t] @ self.W_head
            grads["W_head"] += douts[t].T @ h_t
            grads["b_head"] += douts[t].sum(axis=0)
            _, dh = self.cell.backward(cache, dh_total, cell_grads)
        count = T * B
        for k in grads:
            grads[k] /= count
        return total / count, grads


def estimator_loss(estimate: PoseEstimate, true_pose: Pose) -> float:
    """Squared position error plus weighted squared geodesic error."""
    d = estimate.orientation.angle_to(true_pose.orientation)
    dx = estimate.position - true_pose.position
    return float(np.sum(dx**2) + ROT_LOSS_WEIGHT * d**2)


@dataclass
class EstimatorBuffer:
    """Rollout slices the estimator trains on (shared with the policy).

    Training is teacher-forced: each step's increment is regressed against
    the true motion from the previous *true* pose, optionally with a small
    synthetic base perturbation so the learned map does not amplify the
    bounded base error it will see at deployment. Shape-encoding inputs are
    re-rendered at the training-time base, so only the proprioceptive part
    of the input is stored.
    """

    z: np.ndarray           # (T, n, z_dim) proprioceptive stack (obs units)
    hidden: np.ndarray      # (T, n, hidden): carry *before* each step
    prev_true_q: np.ndarray  # (T, n, 4): true pose the step started from
    prev_true_x: np.ndarray  # (T, n, 3)
    true_q: np.ndarray      # (T, n, 4)
    true_x: np.ndarray      # (T, n, 3)
    fresh: np.ndarray       # (T, n) bool: True where the env was reset this step
    shape_encoder: object = None  # callable (quats, xs) -> (N, enc_dim), obs units
    stack_depth: int = 6
    n_joints: int = 12

    def windows(self, length: int, rng: np.random.Generator, max_windows: int):
        """Sample window start indices that do not cross an episode reset."""
        T, n = self.fresh.shape
        starts = []
        for env in range(n):
            run_start = 0
            for t in range(T + 1):
                if t == T or self.fresh[t, env]:
                    run_len = t - run_start
                    for s in range(run_start, run_start + max(0, run_len - length + 1)):
                        starts.append((s, env))
                    run_start = t
        if not starts:
            raise UsageError("buffer holds no window of the requested length")
        starts = np.array(starts)
        if len(starts) > max_windows:
            idx = rng.choice(len(starts), size=max_windows, replace=False)
            starts = starts[idx]
        return starts


def ecrl_step(estimator: PoseEstimator, buffer: EstimatorBuffer, lr: float = 1e-3,
              window: int = 20, rng: np.random.Generator | None = None,
              max_windows: int = 256) -> float:
    """One supervised update on the shared buffer (plain gradient descent).

    Deterministic (no base perturbation): returns the pre-update mean window
    loss, and with a small enough learning rate the loss on the same buffer
    strictly decreases.
    """
    rng = rng or np.random.default_rng(0)
    starts = buffer.windows(window, rng, max_windows)
    loss, grads = _stacked_window_grads(estimator, buffer, starts, window)
    flat = estimator.flatten_grads(grads)
    estimator.set_flat(estimator.flat_params() - lr * flat)
    return loss


def buffer_loss(estimator: PoseEstimator, buffer: EstimatorBuffer,
                starts: np.ndarray, window: int) -> float:
    loss, _ = _stacked_window_grads(estimator, buffer, starts, window, need_grads=False)
    return loss


def _window_tensors(buffer: EstimatorBuffer, starts, window,
                    perturb_rng: np.random.Generator | None = None,
                    rot_sigma: float = 0.02, pos_sigma: float = 0.001):
    """Assemble (xs, h0, base_q, base_x, true_q, true_x) for stacked windows."""
    t_idx = starts[:, 0][None, :] + np.arange(window)[:, None]   # (window, W)
    e_idx = starts[:, 1][None, :].repeat(window, axis=0)
    zs = buffer.z[t_idx, e_idx]
    h0 = buffer.hidden[starts[:, 0], starts[:, 1]]
    bq = buffer.prev_true_q[t_idx, e_idx]
    bx = buffer.prev_true_x[t_idx, e_idx]
    tq = buffer.true_q[t_idx, e_idx]
    tx = buffer.true_x[t_idx, e_idx]
    if perturb_rng is not None:
        from .so3 import quat_exp, quat_mul, quat_normalize
        eps = perturb_rng.normal(0.0, rot_sigma, bq.shape[:-1] + (3,))
        bq = quat_normalize(quat_mul(quat_exp(eps), bq))
        bx = bx + perturb_rng.normal(0.0, pos_sigma, bx.shape)
    W, B = zs.shape[0], zs.shape[1]
    enc = buffer.shape_encoder(bq.reshape(-1, 4), bx.reshape(-1, 3))
    xs = assemble_inputs(zs, enc.reshape(W, B, -1), buffer.stack_depth, buffer.n_joints)
    return xs, h0, bq, bx, tq, tx


def _stacked_window_grads(estimator, buffer, starts, window, need_grads=True,
                          perturb_rng=None):
    xs, h0, bq, bx, tq, tx = _window_tensors(buffer, starts, window, perturb_rng)
    if need_grads:
        return estimator.window_loss_and_grads(xs, h0, bq, bx, tq, tx)
    # forward-only evaluation
    h = h0
    total = 0.0
    base_M = quat_to_matrix(bq)
    true_M = quat_to_matrix(tq)
    P = np.einsum("tbij,tbkj->tbik", base_M, true_M)
    for t in range(window):
        h, _ = estimator.cell.forward(xs[t], h)
        out = estimator.head(h)
        dpos, M, _ = estimator.deltas_from_head(out)
        ex = bx[t] + dpos - tx[t]
        c = np.clip(0.5 * (np.einsum("bij,bji->b", M, P[t]) - 1.0), -1 + 1e-12, 1 - 1e-12)
        total += float(np.sum(ex**2) + ROT_LOSS_WEIGHT * np.sum(np.arccos(c) ** 2))
    return total / (window * len(starts)), None


class EstimatorTrainer:
    """Adam-based minibatch training used inside the coupled training loop."""

    def __init__(self, estimator: PoseEstimator, lr: float = 1e-3, window: int = 20,
                 windows_per_batch: int = 64, batches_per_update: int = 8, seed: int = 0):
        self.est = estimator
        self.window = window
        self.windows_per_batch = windows_per_batch
        self.batches_per_update = batches_per_update
        self.opt = Adam(estimator.n_params, lr=lr)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))

    def update(self, buffer: EstimatorBuffer) -> float:
        losses = []
        for _ in range(self.batches_per_update):
            starts = buffer.windows(self.window, self.rng, self.windows_per_batch)
            loss, grads = _stacked_window_grads(self.est, buffer, starts, self.window,
                                                perturb_rng=self.rng)
            flat = self.est.flatten_grads(grads)
            if not np.all(np.isfinite(flat)):
                continue
            self.est.set_flat(self.opt.step(self.est.flat_params(), flat))
            losses.append(loss)
        return float(np.mean(losses)) if losses else float("nan")
