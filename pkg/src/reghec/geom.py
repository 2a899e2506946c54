"""Rigid-body geometry: SO(3) exp/log, twists, SE(3) distance, rotation averaging.

Rotation vectors live in so(3) (axis * angle). A twist is the flat 6-vector
``[log(R) | t]``; it is a plain ``numpy`` array so Anderson mixing can take
affine combinations of it directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

SMALL_ANGLE = 1e-8
# Below this the axis is taken from the symmetric part of R.
NEAR_PI_SIN = 1e-3
# Rotation distances under this are rounding noise of exp near +-pi.
ANGLE_RESOLUTION = 1e-12
ORTHO_TOL = 1e-9


def skew(v):
    """Hat operator: 3-vector -> skew-symmetric matrix."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    return np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) * 0.5


def check_rotation(r, tol=ORTHO_TOL):
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol or abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation (R^T R != I or det != 1)")
    return r


def project_to_so3(m):
    """Nearest rotation in the Frobenius sense (SVD projection)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def so3_exp(v):
    """Rodrigues map so(3) -> SO(3)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ValueError(f"so3_exp expects a finite 3-vector, got {v!r}")
    theta = np.linalg.norm(v)
    k = skew(v)
    if theta < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r):
    """Principal logarithm SO(3) -> so(3), with ``|v|`` in [0, pi]."""
    r = check_rotation(r)
    w = vee(r)  # sin(theta) * axis
    s = np.linalg.norm(w)
    c = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arctan2(s, c)
    if theta < SMALL_ANGLE:
        return w * (1.0 + theta**2 / 6.0)
    if s > NEAR_PI_SIN or c > 0:
        return w * (theta / s)
    # theta close to pi: aa^T = (sym(R) - cI) / (1 - c)
    outer = (0.5 * (r + r.T) - c * np.eye(3)) / (1.0 - c)
    k = int(np.argmax(np.diag(outer)))
    axis = outer[:, k] / np.sqrt(outer[k, k])
    axis /= np.linalg.norm(axis)
    if s > 0 and np.dot(axis, w) < 0:
        axis = -axis
    elif s == 0 and axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    return theta * axis


def rotation_angle(r):
    return float(np.linalg.norm(so3_log(r)))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """x -> r @ x + t."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        t = np.array(self.t, dtype=float).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("RigidTransform needs a 3x3 rotation and a 3-vector")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("RigidTransform entries must be finite")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_rotvec(cls, v, t=(0.0, 0.0, 0.0)):
        return cls(so3_exp(v), t)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return RigidTransform(self.r @ other.r, self.r @ other.t + self.t)
        return NotImplemented

    def inverse(self):
        rt = self.r.T
        return RigidTransform(rt, -(rt @ self.t))

    def apply(self, pts):
        """Transform an (N, 3) array or a single 3-vector."""
        pts = np.asarray(pts, dtype=float)
        return pts @ self.r.T + self.t

    def __repr__(self):
        return f"RigidTransform(rotvec={so3_log(self.r).round(6)}, t={self.t.round(6)})"


def pack(x):
    """RigidTransform -> twist ``[log(R) | t]``."""
    return np.concatenate([so3_log(x.r), x.t])


def pack_near(x, ref):
    """Twist of ``x`` whose rotation part is the so(3) representative closest to ``ref``.

    Keeps iterate sequences continuous when the angle crosses pi, so that
    differences and affine combinations of twists stay meaningful.
    """
    v = so3_log(x.r)
    ref = np.asarray(ref, dtype=float)[:3]
    theta = np.linalg.norm(v)
    if theta > 0:
        axis = v / theta
        alt = axis * (theta - 2.0 * np.pi)
        if np.linalg.norm(alt - ref) < np.linalg.norm(v - ref):
            v = alt
    elif np.linalg.norm(ref) > np.pi:
        # identity is also reachable at angle 2 pi along ref's axis
        axis = ref / np.linalg.norm(ref)
        v = axis * 2.0 * np.pi
        if np.linalg.norm(v - ref) > np.linalg.norm(ref):
            v = np.zeros(3)
    return np.concatenate([v, x.t])


def unpack(u):
    u = np.asarray(u, dtype=float)
    if u.shape != (6,):
        raise ValueError("twist must be a 6-vector")
    return RigidTransform(so3_exp(u[:3]), u[3:])


def _quats(v):
    """Unit quaternions (w, x, y, z) for an (N, 3) array of rotation vectors."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    theta = np.linalg.norm(v, axis=1)
    # sin(theta/2)/theta, finite at 0
    s = 0.5 * np.sinc(theta / (2.0 * np.pi))
    return np.cos(0.5 * theta), v * s[:, None]


def rotation_distance_matrix(v1, v2):
    """Pairwise geodesic angles ``|log(exp(a)^T exp(b))|`` for rows of v1, v2.

    The angle is ``2 acos|q1 . q2|`` for unit quaternions. Where that loses
    precision (nearly equal rotations) it is recomputed from the chords:
    ``|q1 - q2| = 2 sin(b/2)`` and ``|q1 + q2| = 2 cos(b/2)`` for quaternions
    ``b`` apart, the shorter chord picking the right sign of the double cover.
    """
    w1, x1 = _quats(v1)
    w2, x2 = _quats(v2)
    q1 = np.column_stack([w1, x1])
    q2 = np.column_stack([w2, x2])
    c = np.minimum(np.abs(q1 @ q2.T), 1.0)
    ang = 2.0 * np.arccos(c)
    close = c > 1.0 - 1e-6
    if close.any():
        i, j = np.nonzero(close)
        minus = np.linalg.norm(q1[i] - q2[j], axis=1)
        plus = np.linalg.norm(q1[i] + q2[j], axis=1)
        ang[i, j] = 4.0 * np.arctan2(np.minimum(minus, plus), np.maximum(minus, plus))
    ang[ang < ANGLE_RESOLUTION] = 0.0
    return ang


def translation_distance_matrix(t1, t2):
    return cdist(np.atleast_2d(np.asarray(t1, dtype=float)), np.atleast_2d(np.asarray(t2, dtype=float)))


def se3_distance(u1, u2, alpha_t):
    """Rotation geodesic plus ``alpha_t**2`` times translation gap."""
    if not alpha_t > 0:
        raise ValueError("alpha_t must be positive")
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    rot = rotation_distance_matrix(u1[:3], u2[:3])[0, 0]
    return float(rot + alpha_t**2 * np.linalg.norm(u1[3:] - u2[3:]))


def rotation_mean(rs, tol=1e-10, max_iter=100):
    """Intrinsic (geodesic L2) mean, started from the first rotation."""
    rs = [np.asarray(r, dtype=float) for r in rs]
    if not rs:
        raise ValueError("rotation_mean needs at least one rotation")
    mean = rs[0].copy()
    for _ in range(max_iter):
        step = np.mean([so3_log(mean.T @ r) for r in rs], axis=0)
        mean = mean @ so3_exp(step)
        if np.linalg.norm(step) < tol:
            break
    return project_to_so3(mean)


def random_rotation(rng, max_angle=np.pi):
    """Uniform axis, angle uniform in [0, max_angle]."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))
