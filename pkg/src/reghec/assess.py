"""Accuracy metrics for a calibrated hand-eye transform.

``err_rotation`` / ``err_translation`` measure the spread of repeated pose
measurements of one stationary target: with a perfect hand-eye transform
every measurement agrees. ``compare_to_ground_truth`` is the direct check
available in simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import NnIndex, PointCloud
from .geom import RigidTransform, check_rotation, rotation_mean, so3_log


@dataclass(frozen=True, eq=False)
class PoseSample:
    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = check_rotation(np.array(self.r, dtype=float))
        t = np.array(self.t, dtype=float).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("pose translation must be a finite 3-vector")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_transform(cls, x):
        return cls(x.r, x.t)


def _as_samples(samples):
    out = [s if isinstance(s, PoseSample) else PoseSample.from_transform(s) for s in samples]
    if len(out) < 2:
        raise ValueError("pose spread needs at least two samples")
    return out


def err_rotation(samples):
    """RMS geodesic deviation from the rotation mean, in degrees."""
    samples = _as_samples(samples)
    mean = rotation_mean([s.r for s in samples])
    sq = [float(np.sum(so3_log(s.r.T @ mean) ** 2)) for s in samples]
    return math.degrees(math.sqrt(np.mean(sq)))


def err_translation(samples):
    """RMS deviation from the mean position, in millimetres."""
    samples = _as_samples(samples)
    t = np.array([s.t for s in samples])
    dev = t - t.mean(axis=0)
    return 1000.0 * math.sqrt(np.mean(np.einsum("ij,ij->i", dev, dev)))


def compare_to_ground_truth(x_est, x_gt):
    """(rotation gap in degrees, translation gap in millimetres)."""
    angle = math.degrees(float(np.linalg.norm(so3_log(x_gt.r.T @ x_est.r))))
    dist = 1000.0 * float(np.linalg.norm(x_est.t - x_gt.t))
    return angle, dist


def kabsch(p, q):
    """Rigid transform minimising sum |T p_i - q_i|^2."""
    cp, cq = p.mean(axis=0), q.mean(axis=0)
    h = (p - cp).T @ (q - cq)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cq - r @ cp)


def register_pair(source, target, init, max_iters=60, tol=1e-10):
    """Point-to-point ICP placing ``source`` onto ``target``, started at ``init``.

    ``source`` should be the partial cloud: each of its points is matched
    to the closest point of ``target``.
    """
    source = source.points if isinstance(source, PointCloud) else np.asarray(source, float)
    index = NnIndex(target)
    target_pts = index.points
    x = init
    for _ in range(max_iters):
        moved = x.apply(source)
        idx, _ = index.query(moved)
        step = kabsch(moved, target_pts[idx])
        x = step @ x
        if np.linalg.norm(so3_log(step.r)) + np.linalg.norm(step.t) < tol:
            break
    return x


def measure_target_poses(sim, x_est, noise_sigma=0.0005, seed=0, sensor=None):
    """Pose of the stationary scene object measured once per robot pose.

    Each view is re-scanned with fresh noise, the scan is registered to the
    scene model pair-wise, and the model pose in the sensor frame is mapped
    into the reference frame through the robot pose and ``x_est``. Errors in ``x_est`` show up as
    disagreement between the measurements.
    """
    from .sim import SensorModel, render_view

    sensor = sensor or SensorModel(noise_sigma=noise_sigma)
    out = []
    for i, b in enumerate(sim.problem.poses):
        true_sensor = b @ sim.x_gt
        scan = render_view(sim.scene, true_sensor, sensor.fov, sensor.range, noise_sigma, seed=seed * 1000 + i)
        sensor_in_model = register_pair(scan, sim.scene, true_sensor)
        out.append(PoseSample.from_transform(b @ x_est @ sensor_in_model.inverse()))
    return out
