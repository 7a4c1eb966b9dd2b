"""Cuboid geometry and the basis-point shape encoding.

The shape encoding follows the basis-point idea: a fixed set of points in the
hand frame, each mapped to the vector from itself to the nearest point on the
object surface at the current pose. For a cuboid the nearest-surface query is
closed-form, so the whole encoding vectorizes over environments and points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .so3 import Rotation, quat_rotate, quat_conj, quat_to_matrix


@dataclass(frozen=True)
class Pose:
    """Rigid pose: position in meters plus orientation."""

    position: np.ndarray
    orientation: Rotation

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ConfigError("pose position must be finite")
        object.__setattr__(self, "position", p)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), Rotation.identity())


@dataclass(frozen=True)
class Cuboid:
    """Axis-aligned box in its own frame, given by positive half extents."""

    half_extents: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if np.any(h <= 0):
            raise ConfigError("half extents must be positive")
        if h.max() / h.min() > 2.0 + 1e-12:
            raise ConfigError("cuboid aspect ratio must not exceed 2")
        object.__setattr__(self, "half_extents", h)


@dataclass(frozen=True)
class BasisPointSet:
    """Fixed hand-frame query points for the shape encoding."""

    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(p) < 1:
            raise ConfigError("need at least one basis point")
        # pairwise distinct
        d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        if d.min() < 1e-12:
            raise ConfigError("basis points must be pairwise distinct")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)


def _halton(index: np.ndarray, base: int) -> np.ndarray:
    """Radical-inverse (van der Corput) sequence for one base."""
    result = np.zeros(index.shape, dtype=np.float64)
    f = 1.0 / base
    i = index.copy()
    while np.any(i > 0):
        result += f * (i % base)
        i //= base
        f /= base
    return result


def default_basis_points(count: int = 32, radius: float = 0.06) -> BasisPointSet:
    """Low-discrepancy (Halton) points inside a ball around the grasp center.

    Deterministic: the same (count, radius) always yields the same set.
    """
    # oversample the Halton cube and keep points inside the unit ball
    n_try = max(4 * count, 64)
    idx = np.arange(1, n_try + 1)
    cube = np.stack([_halton(idx, b) for b in (2, 3, 5)], axis=-1) * 2.0 - 1.0
    inside = np.linalg.norm(cube, axis=-1) <= 1.0
    pts = cube[inside][:count]
    if len(pts) < count:
        raise ConfigError("halton oversampling too small for requested count")
    return BasisPointSet(pts * radius)


def _closest_point_local(p_loc: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Nearest surface point in the cuboid frame, batched over leading axes.

    Exterior queries clamp to the box; interior queries project to the nearest
    face, ties broken by the smallest axis index. sign(0) counts as +.
    """
    p_loc = np.asarray(p_loc, dtype=np.float64)
    clamped = np.clip(p_loc, -half, half)
    inside = np.all(np.abs(p_loc) < half, axis=-1)

    out = clamped.copy()
    if np.any(inside):
        pi = p_loc[inside]
        gap = half - np.abs(pi)  # distance to each face pair
        axis = np.argmin(gap, axis=-1)  # argmin takes the first (smallest) index on ties
        proj = pi.copy()
        rows = np.arange(len(pi))
        sgn = np.where(pi[rows, axis] >= 0.0, 1.0, -1.0)
        proj[rows, axis] = sgn * np.broadcast_to(half, pi.shape)[rows, axis]
        out[inside] = proj
    return out


def closest_point_on_cuboid(pose: Pose, shape: Cuboid, query) -> np.ndarray:
    """Point on the posed cuboid's surface nearest to `query` (world frame)."""
    q = np.asarray(query, dtype=np.float64).reshape(3)
    inv = quat_conj(pose.orientation.as_quat())
    p_loc = quat_rotate(inv, q - pose.position)
    c_loc = _closest_point_local(p_loc, shape.half_extents)
    return pose.orientation.apply(c_loc) + pose.position


def basis_point_encoding(pose: Pose, shape: Cuboid, basis: BasisPointSet) -> np.ndarray:
    """Vectors from each basis point to the nearest cuboid surface point.

    Returns an (N_b, 3) array in basis order.
    """
    surf = surface_points(pose, shape, basis.points)
    return surf - basis.points


def surface_points(pose: Pose, shape: Cuboid, queries: np.ndarray) -> np.ndarray:
    """Nearest surface points for a (N, 3) batch of world-frame queries."""
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    inv = quat_conj(pose.orientation.as_quat())
    local = quat_rotate(inv[None, :], queries - pose.position[None, :])
    c_loc = _closest_point_local(local, shape.half_extents)
    return quat_rotate(pose.orientation.as_quat()[None, :], c_loc) + pose.position[None, :]


def batched_encoding(quats: np.ndarray, positions: np.ndarray,
                     half_extents: np.ndarray, basis_points: np.ndarray) -> np.ndarray:
    """Shape encoding for a batch of poses.

    quats: (n, 4), positions: (n, 3), basis_points: (N_b, 3).
    Returns (n, N_b * 3) with per-point vectors flattened in basis order.
    """
    n = quats.shape[0]
    m = quat_to_matrix(quats)  # (n, 3, 3)
    rel = basis_points[None, :, :] - positions[:, None, :]  # world offsets
    local = np.einsum("nji,npj->npi", m, rel)  # R^T * rel
    c_loc = _closest_point_local(local, half_extents)
    world = np.einsum("nij,npj->npi", m, c_loc) + positions[:, None, :]
    vec = world - basis_points[None, :, :]
    return vec.reshape(n, -1)
