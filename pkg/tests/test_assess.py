import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_transform
from reghec.assess import (
    PoseSample,
    compare_to_ground_truth,
    err_rotation,
    err_translation,
    kabsch,
    measure_target_poses,
)
from reghec.geom import RigidTransform, random_rotation, so3_exp
from reghec.sim import simulate

seeds = st.integers(0, 2**32 - 1)


def samples_from(rs, ts):
    return [PoseSample(r, t) for r, t in zip(rs, ts)]


def test_err_rotation_examples():
    r = so3_exp([0.1, 0.2, 0.3])
    assert err_rotation(samples_from([r] * 4, np.zeros((4, 3)))) == pytest.approx(0.0, abs=1e-9)
    th = 0.2
    pair = samples_from([so3_exp([0, 0, th]), so3_exp([0, 0, -th])], np.zeros((2, 3)))
    assert err_rotation(pair) == pytest.approx(math.degrees(th), rel=1e-12)
    with pytest.raises(ValueError):
        err_rotation(pair[:1])


def test_err_rotation_matches_noise_level():
    # rotation vectors with per-axis std s: E|log|^2 = 3 s^2 (n - 1) / n
    rng = np.random.default_rng(0)
    s, n = math.radians(0.5), 50
    base = so3_exp([0.4, -0.2, 1.0])
    vals = [
        err_rotation(samples_from([base @ so3_exp(rng.normal(scale=s, size=3)) for _ in range(n)], np.zeros((n, 3))))
        for _ in range(200)
    ]
    expected = math.degrees(math.sqrt(3 * s * s * (n - 1) / n))
    assert abs(np.mean(vals) - expected) < 0.2 * expected


def test_err_translation_examples():
    ident = np.eye(3)
    assert err_translation(samples_from([ident] * 3, [[1, 2, 3]] * 3)) == 0.0
    pair = samples_from([ident] * 2, [[0.001, 0, 0], [-0.001, 0, 0]])
    assert err_translation(pair) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        err_translation(pair[:1])


def test_err_translation_matches_textbook_rms():
    rng = np.random.default_rng(1)
    t = rng.normal(scale=0.002, size=(40, 3))
    oracle = 1000 * math.sqrt(sum(np.sum((x - t.mean(axis=0)) ** 2) for x in t) / len(t))
    assert err_translation(samples_from([np.eye(3)] * 40, t)) == pytest.approx(oracle, rel=1e-12)


@given(seeds)
def test_metrics_invariances(seed):
    rng = np.random.default_rng(seed)
    rs = [random_rotation(rng, 0.3) for _ in range(10)]
    ts = rng.normal(scale=0.01, size=(10, 3))
    g = random_rotation(rng)
    off = rng.normal(size=3)
    base = samples_from(rs, ts)
    assert err_rotation(samples_from([g @ r for r in rs], ts)) == pytest.approx(err_rotation(base), abs=1e-7)
    assert err_translation(samples_from(rs, ts + off)) == pytest.approx(err_translation(base), abs=1e-9)
    assert err_rotation(base) > 0 and err_translation(base) > 0


def test_compare_to_ground_truth_examples():
    x = RigidTransform(so3_exp([0.3, 0.1, -0.2]), [0.1, 0.2, 0.3])
    assert compare_to_ground_truth(x, x) == (0.0, 0.0)
    turned = RigidTransform(so3_exp([0, 0, math.radians(1.0)]) @ x.r, x.t)
    angle, dist = compare_to_ground_truth(turned, x)
    assert angle == pytest.approx(1.0, rel=1e-9) and dist == 0.0


@given(seeds)
def test_compare_to_ground_truth_decomposes_perturbation(seed):
    rng = np.random.default_rng(seed)
    x = random_transform(rng)
    phi, dt = rng.normal(scale=0.3, size=3), rng.normal(scale=0.01, size=3)
    est = RigidTransform(x.r @ so3_exp(phi), x.t + dt)
    angle, dist = compare_to_ground_truth(est, x)
    assert angle == pytest.approx(math.degrees(np.linalg.norm(phi)), abs=1e-9)
    assert dist == pytest.approx(1000 * np.linalg.norm(dt), abs=1e-9)


def test_pose_sample_validation():
    with pytest.raises(ValueError):
        PoseSample(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        PoseSample(np.eye(3), [0.0, np.nan, 0.0])


def test_kabsch_recovers_transform():
    rng = np.random.default_rng(2)
    x = random_transform(rng)
    p = rng.normal(size=(30, 3))
    y = kabsch(p, x.apply(p))
    assert np.allclose(y.matrix(), x.matrix(), atol=1e-12)


def test_measurement_harness_detects_calibration_error():
    sp = simulate("cluster", seed=0, noise_sigma=0.0005)
    good = measure_target_poses(sp, sp.x_gt, seed=1)
    off = RigidTransform(so3_exp([0, 0, math.radians(1.0)]) @ sp.x_gt.r, sp.x_gt.t + [0.001, 0, 0])
    bad = measure_target_poses(sp, off, seed=1)
    assert err_rotation(good) < 0.1 and err_translation(good) < 0.5
    assert err_rotation(bad) > 2 * err_rotation(good)
    assert err_translation(bad) > 2 * err_translation(good)
