import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reghec.geom import RigidTransform, random_rotation
from reghec.sim import simulate

settings.register_profile(
    "default", deadline=None, max_examples=100, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_transform(rng, max_angle=np.pi, max_t=1.0):
    return RigidTransform(random_rotation(rng, max_angle), rng.uniform(-max_t, max_t, 3))


@pytest.fixture(scope="session")
def exact_sphere():
    """Noiseless 9-view sphere whose views share scene points."""
    return simulate("sphere", seed=1, shared_points=True)


@pytest.fixture(scope="session")
def exact_cluster():
    return simulate("cluster", n_views=5, seed=2, shared_points=True)


@pytest.fixture(scope="session")
def noisy_sphere():
    return simulate("sphere", seed=3, noise_sigma=0.0005)


def exact_correspondences(rng, x, n_poses=4, per_motion=30, max_angle=1.0, poses=None):
    """Poses and correspondences built by mapping world points into each sensor frame."""
    from reghec.align import CorrespondenceSet

    if poses is None:
        poses = [random_transform(rng, max_angle, 0.5) for _ in range(n_poses)]
    n_poses = len(poses)
    p, q, m = [], [], []
    for i in range(n_poses - 1):
        w = rng.uniform(-0.2, 0.2, (per_motion, 3)) + [0.5, 0.0, 0.0]
        p.append((poses[i] @ x).inverse().apply(w))
        q.append((poses[i + 1] @ x).inverse().apply(w))
        m.append(np.full(per_motion, i))
    return poses, CorrespondenceSet(np.vstack(p), np.vstack(q), np.concatenate(m))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record():
    """Log one pass/fail line for an acceptance criterion, then assert it."""

    def _record(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return _record
