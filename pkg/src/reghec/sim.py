"""Synthetic hand-eye data with known ground truth.

Scenes are sampled primitives with analytic normals. The scene lives in the
registration reference frame: the robot base for eye-in-hand rigs, the
flange for eye-to-hand rigs (object held by the gripper). Either way the
sensor pose of view ``i`` is ``B_i X`` with ``B_i`` the (prepared) pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .errors import EmptyViewError
from .geom import RigidTransform, so3_exp, so3_log
from .reg import CalibrationProblem, Mode, prepare_poses

KINDS = ("plane", "sphere", "cylinder", "cone", "cluster", "point_blob")

DEFAULT_DIMENSIONS = {
    "plane": {"width": 0.297, "height": 0.21, "stroke": 0.012},
    "sphere": {"radius": 0.05},
    "cylinder": {"radius": 0.04, "height": 0.12},
    "cone": {"radius": 0.05, "height": 0.10},
    "cluster": {"scale": 1.0},
    "point_blob": {"radius": 0.04},
}
DEFAULT_DENSITY = 1.2e5  # points per m^2


@dataclass
class SceneSpec:
    kind: str = "sphere"
    dimensions: dict = field(default_factory=dict)
    sample_density: float = DEFAULT_DENSITY
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; expected one of {KINDS}")
        dims = dict(DEFAULT_DIMENSIONS[self.kind])
        dims.update(self.dimensions or {})
        if any(not v > 0 for v in dims.values()):
            raise ValueError("scene dimensions must be positive")
        if not self.sample_density > 0:
            raise ValueError("sample_density must be positive")
        self.dimensions = dims

    def to_dict(self):
        return {"kind": self.kind, "dimensions": dict(self.dimensions),
                "sample_density": self.sample_density, "seed": self.seed}


@dataclass
class SensorModel:
    fov: float = 60.0  # full cone angle, degrees
    range: tuple = (0.1, 2.0)
    noise_sigma: float = 0.0005

    def __post_init__(self):
        if not 0 < self.fov < 180:
            raise ValueError("fov must lie in (0, 180) degrees")
        lo, hi = self.range
        if not 0 <= lo < hi:
            raise ValueError("sensor range must satisfy 0 <= min < max")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def _count(density, area):
    return max(1, int(round(density * area)))


def _sphere(rng, r, density, center=(0.0, 0.0, 0.0)):
    n = _count(density, 4 * math.pi * r * r)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.asarray(center) + r * d, d


# Blank pen strokes on the sheet, as segment endpoints in fractions of (w, h).
# A featureless rectangle only pins in-plane motion through its border.
PLANE_STROKES = np.array([
    [[-0.35, -0.25], [-0.35, 0.25]],
    [[-0.35, 0.25], [-0.15, 0.12]],
    [[-0.15, 0.12], [-0.35, 0.0]],
    [[-0.35, 0.0], [-0.12, -0.25]],
    [[0.0, -0.25], [0.05, 0.25]],
    [[0.05, 0.25], [0.3, 0.2]],
    [[0.02, 0.0], [0.22, 0.02]],
    [[0.0, -0.25], [0.28, -0.22]],
])


def _segment_distance(pts, a, b):
    ab = b - a
    s = np.clip((pts - a) @ ab / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(pts - (a + s[:, None] * ab), axis=1)


def _plane(rng, w, h, density, stroke=0.0):
    """Sheet in the z = 0 plane with blank strokes of width ``stroke``."""
    n = _count(density, w * h)
    xy = np.column_stack([rng.uniform(-w / 2, w / 2, n), rng.uniform(-h / 2, h / 2, n)])
    keep = np.ones(n, dtype=bool)
    for a, b in PLANE_STROKES * [w, h]:
        keep &= _segment_distance(xy, a, b) > stroke / 2
    xy = xy[keep]
    pts = np.column_stack([xy, np.zeros(len(xy))])
    return pts, np.tile([0.0, 0.0, 1.0], (len(xy), 1))


def _disk(rng, r, z, density, up):
    n = _count(density, math.pi * r * r)
    rad = r * np.sqrt(rng.uniform(0, 1, n))
    phi = rng.uniform(0, 2 * math.pi, n)
    pts = np.column_stack([rad * np.cos(phi), rad * np.sin(phi), np.full(n, z)])
    return pts, np.tile([0.0, 0.0, 1.0 if up else -1.0], (n, 1))


def _cylinder(rng, r, h, density):
    """Side wall on z in [0, h] plus the top cap; the base rests on the table."""
    n = _count(density, 2 * math.pi * r * h)
    phi = rng.uniform(0, 2 * math.pi, n)
    side = np.column_stack([r * np.cos(phi), r * np.sin(phi), rng.uniform(0, h, n)])
    side_n = np.column_stack([np.cos(phi), np.sin(phi), np.zeros(n)])
    cap, cap_n = _disk(rng, r, h, density, up=True)
    return np.vstack([side, cap]), np.vstack([side_n, cap_n])


def _cone(rng, r, h, density):
    """Lateral surface, base radius r at z = 0, apex at z = h."""
    slant = math.hypot(r, h)
    n = _count(density, math.pi * r * slant)
    # area element grows linearly with distance from the apex
    s = np.sqrt(rng.uniform(0, 1, n))
    phi = rng.uniform(0, 2 * math.pi, n)
    rad = r * s
    pts = np.column_stack([rad * np.cos(phi), rad * np.sin(phi), h * (1 - s)])
    nrm = np.column_stack([h * np.cos(phi), h * np.sin(phi), np.full(n, r)]) / slant
    return pts, nrm


def generate_scene(spec):
    """Sample the primitive surface uniformly; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    d = spec.dimensions
    rho = spec.sample_density
    if spec.kind == "sphere":
        pts, nrm = _sphere(rng, d["radius"], rho)
    elif spec.kind == "plane":
        pts, nrm = _plane(rng, d["width"], d["height"], rho, d["stroke"])
    elif spec.kind == "cylinder":
        pts, nrm = _cylinder(rng, d["radius"], d["height"], rho)
    elif spec.kind == "cone":
        pts, nrm = _cone(rng, d["radius"], d["height"], rho)
    elif spec.kind == "cluster":
        k = d["scale"]
        parts = []
        p, n = _sphere(rng, 0.03 * k, rho, center=(-0.06 * k, 0.01 * k, 0.03 * k))
        parts.append((p, n))
        p, n = _cylinder(rng, 0.025 * k, 0.08 * k, rho)
        parts.append((p + [0.05 * k, 0.04 * k, 0.0], n))
        p, n = _cone(rng, 0.03 * k, 0.07 * k, rho)
        parts.append((p + [0.01 * k, -0.06 * k, 0.0], n))
        pts = np.vstack([p for p, _ in parts])
        nrm = np.vstack([n for _, n in parts])
    elif spec.kind == "point_blob":
        r = d["radius"]
        n = _count(rho, 4 * math.pi * r * r)
        return PointCloud(rng.normal(scale=r / 2, size=(n, 3)))
    else:  # pragma: no cover - guarded by SceneSpec
        raise ValueError(f"unknown scene kind {spec.kind!r}")
    return PointCloud(pts, normals=nrm)


def visible_indices(scene, sensor_pose, fov=60.0, range=(0.1, 2.0)):
    """Indices of scene points inside the view cone and range, facing the sensor."""
    if not 0 < fov < 180:
        raise ValueError("fov must lie in (0, 180) degrees")
    lo, hi = range
    if not 0 <= lo < hi:
        raise ValueError("sensor range must satisfy 0 <= min < max")
    inv = sensor_pose.inverse()
    pts = inv.apply(scene.points)
    dist = np.linalg.norm(pts, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_off = pts[:, 2] / dist
    keep = (dist >= lo) & (dist <= hi) & (cos_off >= math.cos(math.radians(fov / 2)))
    if scene.normals is not None:
        nrm = scene.normals @ inv.r.T
        keep &= np.einsum("ij,ij->i", pts, nrm) < 0
    return np.flatnonzero(keep)


def render_view(scene, sensor_pose, fov=60.0, range=(0.1, 2.0), noise_sigma=0.0005, seed=0, view=None):
    """Sensor-frame cloud of the visible part of ``scene`` with Gaussian noise.

    ``sensor_pose`` maps sensor coordinates into the scene frame; the sensor
    looks along its +z axis.
    """
    idx = visible_indices(scene, sensor_pose, fov, range)
    if len(idx) == 0:
        raise EmptyViewError("no scene point is visible from this sensor pose")
    pts = sensor_pose.inverse().apply(scene.points[idx])
    if noise_sigma > 0:
        pts = pts + np.random.default_rng(seed).normal(scale=noise_sigma, size=pts.shape)
    return PointCloud(pts, view)


def look_at(eye, target, roll=0.0):
    """Sensor pose at ``eye`` with +z towards ``target``, rotated by ``roll`` about +z."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.99 else np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.column_stack([x, y, z]) @ so3_exp([0.0, 0.0, roll])
    return RigidTransform(r, eye)


def viewpoints(n_views=9, radius=0.4, seed=0, target=(0.0, 0.0, 0.0), span_deg=60.0,
               zigzag_deg=5.0, roll=0.6, aim_jitter=0.03):
    """Sensor poses on a viewing hemisphere around ``target`` (target frame).

    Azimuth sweeps ``span_deg`` in equal steps while elevation zig-zags;
    roll, stand-off and the look-at point are jittered so motion axes are
    never parallel and the object lands at different spots of the image.
    """
    rng = np.random.default_rng(seed)
    target = np.asarray(target, dtype=float)
    span = math.radians(span_deg)
    poses = []
    for i in range(n_views):
        az = -span / 2 + span * i / max(n_views - 1, 1) + rng.uniform(-0.05, 0.05)
        el = math.radians(55.0 + (zigzag_deg if i % 2 else -zigzag_deg)) + rng.uniform(-0.05, 0.05)
        dist = radius + rng.uniform(-0.05, 0.05)
        eye = target + dist * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        aim = target + rng.uniform(-aim_jitter, aim_jitter, 3)
        poses.append(look_at(eye, aim, roll=rng.uniform(-roll, roll)))
    return poses


DEFAULT_X_EYE_IN_HAND = RigidTransform(so3_exp([0.3, -0.4, 1.9]), [0.04, -0.06, 0.08])
DEFAULT_X_EYE_TO_HAND = RigidTransform(so3_exp([2.0, -0.6, 0.4]), [-0.6, -0.2, 0.2])
# scene placement in the reference frame (base, or flange for eye-to-hand)
DEFAULT_TARGET = {
    Mode.EYE_IN_HAND: RigidTransform(np.eye(3), [0.5, 0.0, 0.0]),
    Mode.EYE_TO_HAND: RigidTransform(np.eye(3), [0.0, 0.0, 0.15]),
}


def default_x(mode):
    mode = Mode.parse(mode)
    return DEFAULT_X_EYE_IN_HAND if mode is Mode.EYE_IN_HAND else DEFAULT_X_EYE_TO_HAND


def default_trajectory(x_gt, mode=Mode.EYE_IN_HAND, n_views=9, seed=0, target_pose=None, **view_kw):
    """Raw robot poses (flange w.r.t. base) that look at the target.

    Eye-in-hand: ``A_i = S_i X^-1``. Eye-to-hand: the sensor pose relative to
    the flange is ``A_i^-1 X = S_i``, hence ``A_i = X S_i^-1``.
    """
    mode = Mode.parse(mode)
    target_pose = target_pose or DEFAULT_TARGET[mode]
    sensors = [target_pose @ s for s in viewpoints(n_views, seed=seed, **view_kw)]
    if mode is Mode.EYE_IN_HAND:
        return [s @ x_gt.inverse() for s in sensors]
    return [x_gt @ s.inverse() for s in sensors]


@dataclass
class PoseReport:
    flags: list
    motion_angles: list
    axis_min_angle: float | None

    @property
    def ok(self):
        return not self.flags

    def describe(self):
        return "; ".join(self.flags) if self.flags else "poses OK"


SINGLE_MOTION = "single robot motion"
PURE_TRANSLATION = "pure translation motion"
PARALLEL_AXES = "parallel rotation axes"


def validate_poses(poses, min_angle_deg=0.5, parallel_deg=0.5):
    """Flag trajectories for which the hand-eye transform is unobservable."""
    flags = []
    if len(poses) < 3:
        flags.append(SINGLE_MOTION)
    angles, axes = [], []
    for a, b in zip(poses[:-1], poses[1:]):
        v = so3_log(a.r.T @ b.r)
        ang = math.degrees(np.linalg.norm(v))
        angles.append(ang)
        if ang >= min_angle_deg:
            axes.append(v / np.linalg.norm(v))
    if any(a < min_angle_deg for a in angles):
        flags.append(PURE_TRANSLATION)
    min_axis = None
    if len(axes) >= 2:
        gaps = [
            math.degrees(math.acos(min(1.0, abs(float(np.dot(p, q))))))
            for i, p in enumerate(axes) for q in axes[i + 1:]
        ]
        min_axis = max(gaps)
        if min_axis < parallel_deg:
            flags.append(PARALLEL_AXES)
    return PoseReport(flags, angles, min_axis)


@dataclass
class SimulatedProblem:
    problem: CalibrationProblem
    x_gt: RigidTransform
    scene: PointCloud  # reference frame
    robot_poses: list  # raw, as a controller would report them
    visibility: list  # per view, indices into the rendered scene
    scenes: list = field(default_factory=list, repr=False)  # per-view scene samples


def make_problem(
    scene_spec,
    x_gt,
    robot_poses,
    mode=Mode.EYE_IN_HAND,
    sensor=None,
    shared_points=False,
    target_pose=None,
    seed=0,
    **problem_kw,
):
    """Render one view per robot pose and package a calibration problem.

    With ``shared_points`` every view is cut from the same scene sample, so
    overlapping views contain identical world points; otherwise each view
    sees an independent resampling of the surface.
    """
    mode = Mode.parse(mode)
    sensor = sensor or SensorModel()
    report = validate_poses(robot_poses)
    if not report.ok:
        raise ValueError(f"degenerate robot poses: {report.describe()}")
    target_pose = target_pose or DEFAULT_TARGET[mode]
    poses = prepare_poses(robot_poses, mode)
    base_scene = generate_scene(scene_spec).transformed(target_pose)
    clouds, vis, scenes = [], [], []
    for i, b in enumerate(poses):
        if shared_points:
            scene = base_scene
        else:
            spec_i = SceneSpec(scene_spec.kind, scene_spec.dimensions, scene_spec.sample_density,
                               scene_spec.seed * 7919 + 1000 + i)
            scene = generate_scene(spec_i).transformed(target_pose)
        sensor_pose = b @ x_gt
        idx = visible_indices(scene, sensor_pose, sensor.fov, sensor.range)
        if len(idx) == 0:
            raise EmptyViewError(f"view {i} sees nothing")
        clouds.append(render_view(scene, sensor_pose, sensor.fov, sensor.range, sensor.noise_sigma,
                                  seed=seed * 1000 + i, view=i))
        vis.append(idx)
        scenes.append(scene)
    prob = CalibrationProblem(clouds, poses, mode, **problem_kw)
    return SimulatedProblem(prob, x_gt, base_scene, list(robot_poses), vis, scenes)


def simulate(kind="sphere", mode=Mode.EYE_IN_HAND, n_views=9, noise_sigma=0.0, seed=0,
             shared_points=False, x_gt=None, density=DEFAULT_DENSITY, view_kw=None, **problem_kw):
    """Default scene + default trajectory + :func:`make_problem`."""
    mode = Mode.parse(mode)
    x_gt = x_gt or default_x(mode)
    poses = default_trajectory(x_gt, mode, n_views, seed, **(view_kw or {}))
    spec = SceneSpec(kind, sample_density=density, seed=seed)
    return make_problem(spec, x_gt, poses, mode, SensorModel(noise_sigma=noise_sigma),
                        shared_points=shared_points, seed=seed, **problem_kw)
