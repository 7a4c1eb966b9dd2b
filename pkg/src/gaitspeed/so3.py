"""Rotation algebra on SO(3) with unit quaternions.

Quaternions are stored (w, x, y, z) and canonicalized so that serialization
is deterministic: the scalar part is kept non-negative (for w == 0 the first
nonzero vector component is made positive). A rotation and its negated
quaternion therefore map to one representative, which also makes geodesic
distances immune to double-cover artifacts.

Batched helpers operate on float64 arrays of shape (..., 4) and are the hot
path for the simulator; the `Rotation` class is a thin value-type wrapper
used by the public geometry API.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidRotationError

UNIT_TOL = 1e-6


# ---------------------------------------------------------------------------
# batched quaternion primitives (arrays of shape (..., 4))
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / n


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip signs so the first nonzero component (scanning w,x,y,z) is > 0."""
    q = np.asarray(q, dtype=np.float64)
    key = np.where(np.abs(q) > 1e-12, np.sign(q), 0.0)
    # first nonzero sign along the last axis
    idx = np.argmax(np.abs(key) > 0, axis=-1)
    sgn = np.take_along_axis(key, idx[..., None], axis=-1)
    sgn = np.where(sgn == 0.0, 1.0, sgn)
    return q * sgn


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b, broadcasting over leading axes."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    out = np.array(q, dtype=np.float64, copy=True)
    out[..., 1:] *= -1.0
    return out


def quat_angle(q: np.ndarray) -> np.ndarray:
    """Rotation angle in [0, pi] of quaternion(s) q."""
    vec = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(vec, np.abs(q[..., 0]))


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Quaternion of the rotation vector (axis * angle), batched."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x)/x via series near zero keeps the map smooth at the origin
    small = angle < 1e-8
    k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(angle == 0.0, 1.0, angle))
    w = np.cos(half)
    return np.concatenate([w, rotvec * k], axis=-1)


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle, angle in [0, pi]) of quaternion(s)."""
    q = np.where(q[..., :1] < 0.0, -q, q)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    k = np.where(s < 1e-12, 2.0, angle / np.where(s == 0.0, 1.0, s))
    return vec * k


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix (batched: shape (..., 3, 3))."""
    w, x, y, z = (q[..., i] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (yy + zz)
    m[..., 0, 1] = 2 * (xy - wz)
    m[..., 0, 2] = 2 * (xz + wy)
    m[..., 1, 0] = 2 * (xy + wz)
    m[..., 1, 1] = 1 - 2 * (xx + zz)
    m[..., 1, 2] = 2 * (yz - wx)
    m[..., 2, 0] = 2 * (xz - wy)
    m[..., 2, 1] = 2 * (yz + wx)
    m[..., 2, 2] = 1 - 2 * (xx + yy)
    return m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Quaternion of an orthonormal 3x3 matrix (Shepperd's method, batched)."""
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    q = np.empty(batch + (4,), dtype=np.float64)
    t = np.einsum("...ii->...", m)
    # four candidate constructions; pick the numerically largest pivot
    cand = np.stack(
        [t, m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]], axis=-1
    )
    choice = np.argmax(cand, axis=-1)

    def fill(mask, arrs):
        for i, a in enumerate(arrs):
            q[..., i][mask] = a[mask]

    s = np.sqrt(np.maximum(1.0 + t, 0.0)) * 2.0  # 4w
    with np.errstate(divide="ignore", invalid="ignore"):
        fill(choice == 0, [0.25 * s,
                           (m[..., 2, 1] - m[..., 1, 2]) / s,
                           (m[..., 0, 2] - m[..., 2, 0]) / s,
                           (m[..., 1, 0] - m[..., 0, 1]) / s])
        s0 = np.sqrt(np.maximum(1.0 + m[..., 0, 0] - m[..., 1, 1] - m[..., 2, 2], 0.0)) * 2.0
        fill(choice == 1, [(m[..., 2, 1] - m[..., 1, 2]) / s0,
                           0.25 * s0,
                           (m[..., 0, 1] + m[..., 1, 0]) / s0,
                           (m[..., 0, 2] + m[..., 2, 0]) / s0])
        s1 = np.sqrt(np.maximum(1.0 - m[..., 0, 0] + m[..., 1, 1] - m[..., 2, 2], 0.0)) * 2.0
        fill(choice == 2, [(m[..., 0, 2] - m[..., 2, 0]) / s1,
                           (m[..., 0, 1] + m[..., 1, 0]) / s1,
                           0.25 * s1,
                           (m[..., 1, 2] + m[..., 2, 1]) / s1])
        s2 = np.sqrt(np.maximum(1.0 - m[..., 0, 0] - m[..., 1, 1] + m[..., 2, 2], 0.0)) * 2.0
        fill(choice == 3, [(m[..., 1, 0] - m[..., 0, 1]) / s2,
                           (m[..., 0, 2] + m[..., 2, 0]) / s2,
                           (m[..., 1, 2] + m[..., 2, 1]) / s2,
                           0.25 * s2])
    return quat_canonical(quat_normalize(q))


def quat_geodesic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic angle between quaternions, stable down to ~1e-9 rad.

    With the shorter-arc sign s, |a - b s| = 2 sin(phi/2) and
    |a + b s| = 2 cos(phi/2) for the 4-vector angle phi; the rotation angle
    is 2 phi. atan2 keeps full precision near 0 and pi, unlike arccos.
    """
    dot = np.sum(a * b, axis=-1, keepdims=True)
    bs = np.where(dot < 0.0, -b, b)
    d = np.linalg.norm(a - bs, axis=-1)
    s = np.linalg.norm(a + bs, axis=-1)
    return 4.0 * np.arctan2(d, s)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q."""
    qv = q[..., 1:]
    t = 2.0 * np.cross(qv, v)
    return v + q[..., :1] * t + np.cross(qv, t)


def rotation_feature(q: np.ndarray) -> np.ndarray:
    """First two rotation-matrix columns, flattened to 6 values.

    Layout: (m00, m10, m20, m01, m11, m21); the identity maps to
    (1, 0, 0, 0, 1, 0).
    """
    m = quat_to_matrix(q)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def feature_to_quat(f: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the 6-value feature back to a quaternion (first column wins)."""
    f = np.asarray(f, dtype=np.float64)
    a = f[..., 0:3]
    b = f[..., 3:6]
    c0 = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b - np.sum(c0 * b, axis=-1, keepdims=True) * c0
    c1 = b / np.linalg.norm(b, axis=-1, keepdims=True)
    c2 = np.cross(c0, c1)
    m = np.stack([c0, c1, c2], axis=-1)
    return matrix_to_quat(m)


# ---------------------------------------------------------------------------
# public value type and operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rotation:
    """Unit quaternion, canonicalized (w >= 0) at construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        q = np.array([self.w, self.x, self.y, self.z], dtype=np.float64)
        n = float(np.linalg.norm(q))
        if not np.isfinite(n) or abs(n - 1.0) > UNIT_TOL:
            raise InvalidRotationError(f"quaternion norm {n!r} differs from 1 beyond {UNIT_TOL}")
        q = quat_canonical(q / n)
        object.__setattr__(self, "w", float(q[0]))
        object.__setattr__(self, "x", float(q[1]))
        object.__setattr__(self, "y", float(q[2]))
        object.__setattr__(self, "z", float(q[3]))

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_quat(q) -> "Rotation":
        q = np.asarray(q, dtype=np.float64).reshape(4)
        return Rotation(q[0], q[1], q[2], q[3])

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        return Rotation.from_quat(quat_exp(axis * float(angle)))

    def as_quat(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def as_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.as_quat())

    def inverse(self) -> "Rotation":
        return Rotation.from_quat(quat_conj(self.as_quat()))

    def compose(self, other: "Rotation") -> "Rotation":
        """Return self ∘ other (apply `other` first)."""
        return Rotation.from_quat(quat_mul(self.as_quat(), other.as_quat()))

    def apply(self, v) -> np.ndarray:
        return quat_rotate(self.as_quat(), np.asarray(v, dtype=np.float64))

    def angle_to(self, other: "Rotation") -> float:
        return float(quat_geodesic(self.as_quat(), other.as_quat()))

    def to_bytes(self) -> bytes:
        """(w, x, y, z) as little-endian 64-bit floats, w >= 0."""
        return self.as_quat().astype("<f8").tobytes()

    @staticmethod
    def from_bytes(raw: bytes) -> "Rotation":
        return Rotation.from_quat(np.frombuffer(raw, dtype="<f8", count=4))


def _check_unit(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q, axis=-1)
    if not np.all(np.abs(n - 1.0) <= UNIT_TOL):
        raise InvalidRotationError("non-unit quaternion input")
    return q


def geodesic_distance(a: Rotation, b: Rotation) -> float:
    """Bi-invariant angle between two orientations, in [0, pi]."""
    qa = _check_unit(a.as_quat())
    qb = _check_unit(b.as_quat())
    return float(quat_geodesic(qa, qb))


def sample_uniform_rotation(rng: np.random.Generator) -> Rotation:
    """Draw a rotation uniformly (normalized 4D Gaussian)."""
    return Rotation.from_quat(quat_normalize(rng.normal(size=4)))


def sample_uniform_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return quat_canonical(quat_normalize(q))


def relative_rotation(goal: Rotation, estimate: Rotation) -> Rotation:
    """goal ∘ estimate⁻¹: the rotation still needed to bring `estimate` onto `goal`."""
    return goal.compose(estimate.inverse())


def rotation_to_feature(r: Rotation) -> np.ndarray:
    """6-value network-friendly encoding (two matrix columns)."""
    return rotation_feature(r.as_quat())


def feature_to_rotation(f) -> Rotation:
    return Rotation.from_quat(feature_to_quat(np.asarray(f, dtype=np.float64)))


def discretized_goal_set(step: float = np.pi / 4) -> list[Rotation]:
    """Closure (to depth 8) of ±step rotations about the principal axes.

    Elements are deduplicated under geodesic distance < 1e-6 and returned in
    lexicographic quaternion order, so the set is deterministic. For
    step = pi/2 this is the 24-element rotational octahedral group.
    """
    step = float(step)
    if step <= 0:
        raise ConfigError("step must be positive")
    ratio = np.pi / step
    if abs(ratio - round(ratio)) > 1e-12:
        raise ConfigError("step must divide pi")

    gens = []
    for axis in np.eye(3):
        for sgn in (1.0, -1.0):
            gens.append(quat_exp(axis * (sgn * step)))
    gens = np.array(gens)

    def key(q):
        qc = quat_canonical(quat_normalize(q.reshape(1, 4)))[0]
        return tuple(np.round(qc, 9))

    seen = {key(np.array([1.0, 0, 0, 0])): np.array([1.0, 0, 0, 0])}
    frontier = [np.array([1.0, 0, 0, 0])]
    for _ in range(8):
        nxt = []
        for q in frontier:
            for g in gens:
                cand = quat_normalize(quat_mul(g, q).reshape(1, 4))[0]
                k = key(cand)
                if k not in seen:
                    seen[k] = quat_canonical(cand.reshape(1, 4))[0]
                    nxt.append(cand)
        if not nxt:
            break
        frontier = nxt

    quats = sorted(seen.values(), key=lambda q: tuple(np.round(q, 12)))
    return [Rotation.from_quat(q) for q in quats]
