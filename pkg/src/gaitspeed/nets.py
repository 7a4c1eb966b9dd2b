"""Minimal float64 neural nets with hand-written backprop.

Everything here operates on flat parameter vectors so checkpoints, gradient
checks, and the deterministic Adam updates stay trivial. The cost of writing
the backward passes by hand is repaid by exact reproducibility (no framework
nondeterminism) and by making the finite-difference tests meaningful.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError

LOG_2PI = math.log(2.0 * math.pi)


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))  # deterministic sign convention
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class FlatModule:
    """Base: a list of named arrays packable into one float64 vector."""

    def __init__(self):
        self._arrays: list[np.ndarray] = []
        self._names: list[str] = []

    def _register(self, name: str, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr, dtype=np.float64)
        self._arrays.append(arr)
        self._names.append(name)
        return arr

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self._arrays)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self._arrays])

    def set_flat(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size != self.n_params:
            raise ConfigError(f"parameter vector has {vec.size} entries, expected {self.n_params}")
        off = 0
        for a in self._arrays:
            a[...] = vec[off:off + a.size].reshape(a.shape)
            off += a.size

    def flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[n].reshape(-1) for n in self._names])

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(a) for n, a in zip(self._names, self._arrays)}


class MLP(FlatModule):
    """Feedforward tanh network with a linear output layer."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, out_gain: float = 1.0):
        super().__init__()
        self.sizes = list(sizes)
        self.W, self.b = [], []
        for li in range(len(sizes) - 1):
            last = li == len(sizes) - 2
            gain = out_gain if last else math.sqrt(2.0)
            W = self._register(f"W{li}", orthogonal(rng, sizes[li + 1], sizes[li], gain))
            b = self._register(f"b{li}", np.zeros(sizes[li + 1]))
            self.W.append(W)
            self.b.append(b)

    def forward(self, x: np.ndarray):
        """Returns (output, cache); x has shape (batch, in_dim)."""
        h = np.asarray(x, dtype=np.float64)
        acts = [h]
        for li in range(len(self.W) - 1):
            h = np.tanh(h @ self.W[li].T + self.b[li])
            acts.append(h)
        out = h @ self.W[-1].T + self.b[-1]
        return out, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list[np.ndarray], dout: np.ndarray) -> tuple[dict, np.ndarray]:
        """Backprop dout (batch, out_dim); returns (grads, dx)."""
        grads = {}
        d = np.asarray(dout, dtype=np.float64)
        grads[f"W{len(self.W) - 1}"] = d.T @ acts[-1]
        grads[f"b{len(self.W) - 1}"] = d.sum(axis=0)
        d = d @ self.W[-1]
        for li in range(len(self.W) - 2, -1, -1):
            d = d * (1.0 - acts[li + 1] ** 2)
            grads[f"W{li}"] = d.T @ acts[li]
            grads[f"b{li}"] = d.sum(axis=0)
            d = d @ self.W[li]
        return grads, d


class GaussianPolicy(FlatModule):
    """Diagonal-Gaussian policy with tanh squashing to [-1, 1].

    The Gaussian is over a pre-squash variable u; actions are a = tanh(u).
    Log-densities are reported for the squashed action (change of variables
    included). PPO ratios are unaffected by the squash correction because it
    depends on the action alone.
    """

    def __init__(self, obs_dim: int, act_dim: int, hidden: list[int],
                 rng: np.random.Generator, init_log_std: float = -0.5,
                 gate_bias: float = -1.0):
        super().__init__()
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.trunk = MLP([obs_dim] + list(hidden) + [act_dim], rng, out_gain=0.01)
        for n, a in zip(self.trunk._names, self.trunk._arrays):
            self._register(f"trunk.{n}", a)
        self.log_std = self._register("log_std", np.full(act_dim, float(init_log_std)))
        # bias the grasp gate toward closed at init so early exploration
        # does not spend most of its time in the drop hazard
        self.trunk.b[-1][-1] = gate_bias

    @property
    def architecture(self) -> dict:
        return {"kind": "tanh_gaussian_policy", "obs_dim": self.obs_dim,
                "act_dim": self.act_dim, "sizes": self.trunk.sizes}

    def forward(self, obs: np.ndarray):
        """Returns (mean, log_std) of the pre-squash Gaussian."""
        mean, _ = self.trunk.forward(np.atleast_2d(obs))
        log_std = np.broadcast_to(self.log_std, mean.shape)
        return mean, log_std

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """Returns (action, pre_squash, log_prob) for a batch of observations."""
        mean, acts = self.trunk.forward(obs)
        std = np.exp(self.log_std)
        u = mean + std[None, :] * rng.standard_normal(mean.shape)
        a = np.tanh(u)
        logp = self.log_prob_of(u, mean)
        return a, u, logp

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        mean, _ = self.trunk.forward(obs)
        return np.tanh(mean)

    def log_prob_of(self, u: np.ndarray, mean: np.ndarray) -> np.ndarray:
        """Log-density of the squashed action a = tanh(u)."""
        std = np.exp(self.log_std)
        z = (u - mean) / std[None, :]
        logp_u = -0.5 * np.sum(z**2, axis=-1) - np.sum(self.log_std) - 0.5 * self.act_dim * LOG_2PI
        correction = np.sum(np.log1p(-np.tanh(u) ** 2 + 1e-300), axis=-1)
        return logp_u - correction

    def entropy(self) -> float:
        """Entropy of the pre-squash Gaussian (per sample; state-independent)."""
        return float(np.sum(self.log_std) + 0.5 * self.act_dim * (1.0 + LOG_2PI))


class ValueNet(FlatModule):
    def __init__(self, obs_dim: int, hidden: list[int], rng: np.random.Generator):
        super().__init__()
        self.obs_dim = obs_dim
        self.trunk = MLP([obs_dim] + list(hidden) + [1], rng, out_gain=1.0)
        for n, a in zip(self.trunk._names, self.trunk._arrays):
            self._register(f"trunk.{n}", a)

    @property
    def architecture(self) -> dict:
        return {"kind": "mlp_value", "obs_dim": self.obs_dim, "sizes": self.trunk.sizes}

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        v, _ = self.trunk.forward(np.atleast_2d(obs))
        return v[:, 0]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class GRUCell(FlatModule):
    """Single gated recurrent cell, float64, with an explicit backward pass.

    Update: r = sig(Wr x + Ur h + br), z = sig(Wz x + Uz h + bz),
            n = tanh(Wn x + r * (Un h) + bn), h' = (1 - z) * n + z * h.
    """

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim, self.hidden_dim = in_dim, hidden_dim
        g = 1.0
        for gate in ("r", "z", "n"):
            self._register(f"W{gate}", orthogonal(rng, hidden_dim, in_dim, g))
            self._register(f"U{gate}", orthogonal(rng, hidden_dim, hidden_dim, g))
            self._register(f"b{gate}", np.zeros(hidden_dim))
        (self.Wr, self.Ur, self.br, self.Wz, self.Uz, self.bz,
         self.Wn, self.Un, self.bn) = self._arrays

    def forward(self, x: np.ndarray, h: np.ndarray):
        r = _sigmoid(x @ self.Wr.T + h @ self.Ur.T + self.br)
        z = _sigmoid(x @ self.Wz.T + h @ self.Uz.T + self.bz)
        hn = h @ self.Un.T
        n = np.tanh(x @ self.Wn.T + r * hn + self.bn)
        h_new = (1.0 - z) * n + z * h
        cache = (x, h, r, z, n, hn)
        return h_new, cache

    def backward(self, cache, dh_new: np.ndarray, grads: dict):
        x, h, r, z, n, hn = cache
        dn = dh_new * (1.0 - z)
        dz = dh_new * (h - n)
        dh = dh_new * z

        da_n = dn * (1.0 - n**2)
        grads["Wn"] += da_n.T @ x
        grads["bn"] += da_n.sum(axis=0)
        dr = da_n * hn
        dhn = da_n * r
        grads["Un"] += dhn.T @ h
        dh += dhn @ self.Un
        dx = da_n @ self.Wn

        da_z = dz * z * (1.0 - z)
        grads["Wz"] += da_z.T @ x
        grads["Uz"] += da_z.T @ h
        grads["bz"] += da_z.sum(axis=0)
        dx += da_z @ self.Wz
        dh += da_z @ self.Uz

        da_r = dr * r * (1.0 - r)
        grads["Wr"] += da_r.T @ x
        grads["Ur"] += da_r.T @ h
        grads["br"] += da_r.sum(axis=0)
        dx += da_r @ self.Wr
        dh += da_r @ self.Ur
        return dx, dh


class Adam:
    """Plain Adam on a flat parameter vector."""

    def __init__(self, n_params: int, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm
