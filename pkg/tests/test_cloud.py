import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reghec.cloud import (
    NnIndex,
    PointCloud,
    load_cloud,
    nearest,
    random_subsample,
    save_cloud,
    voxel_downsample,
)
from reghec.errors import InvalidStateError, ParseError
from reghec.geom import RigidTransform, so3_exp

PLY3 = """ply
format ascii 1.0
comment three points
element vertex 3
property float x
property float y
property float z
property uchar red
end_header
0.1 0.2 0.3 255
-1.5 2.25 0 0
1e-3 -4 5.5 7
"""


def test_load_fixture(tmp_path):
    f = tmp_path / "three.ply"
    f.write_text(PLY3)
    c = load_cloud(f)
    assert np.array_equal(c.points, [[0.1, 0.2, 0.3], [-1.5, 2.25, 0.0], [1e-3, -4.0, 5.5]])


def test_save_load_round_trip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(1000, 3))
    save_cloud(PointCloud(pts), tmp_path / "c.ply")
    assert np.array_equal(load_cloud(tmp_path / "c.ply").points, pts)


def test_empty_vertex_element(tmp_path):
    f = tmp_path / "e.ply"
    f.write_text("ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\n"
                 "property float y\nproperty float z\nend_header\n")
    assert len(load_cloud(f)) == 0


@pytest.mark.parametrize(
    "body, line",
    [
        ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
         "property float z\nend_header\n1 two 3\n", 8),
        ("ply\nformat binary_little_endian 1.0\nend_header\n", 2),
        ("plyx\n", 1),
        ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
         "property float z\nend_header\n1 2 3\n", 9),
    ],
)
def test_malformed_files_name_the_line(tmp_path, body, line):
    f = tmp_path / "bad.ply"
    f.write_text(body)
    with pytest.raises(ParseError) as info:
        load_cloud(f)
    assert info.value.line == line
    assert f":{line}" in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        load_cloud(tmp_path / "nope.ply")


def test_pointcloud_rejects_non_finite():
    with pytest.raises(ValueError):
        PointCloud([[0, 0, np.inf]])


def test_transform_preserves_size_and_distances():
    rng = np.random.default_rng(1)
    c = PointCloud(rng.normal(size=(200, 3)))
    x = RigidTransform(so3_exp([0.3, 1.0, -2.0]), [1, 2, 3])
    d = c.transformed(x)
    assert len(d) == len(c)
    i, j = rng.integers(0, 200, (2, 50))
    assert np.allclose(
        np.linalg.norm(c.points[i] - c.points[j], axis=1),
        np.linalg.norm(d.points[i] - d.points[j], axis=1),
        atol=1e-9,
    )


def test_voxel_merges_close_points():
    c = PointCloud([[0.0002, 0.0002, 0.0002], [0.0007, 0.0002, 0.0002]])
    out = voxel_downsample(c, 0.001)
    assert np.allclose(out.points, [[0.00045, 0.0002, 0.0002]])


def test_voxel_keeps_separated_grid():
    g = np.stack(np.meshgrid(*[np.arange(5) * 0.01 + 0.0005] * 3), -1).reshape(-1, 3)
    assert len(voxel_downsample(PointCloud(g), 0.001)) == len(g)


def test_voxel_matches_hash_oracle():
    pts = np.random.default_rng(2).uniform(0, 1, (10000, 3))
    out = voxel_downsample(PointCloud(pts), 0.1)
    buckets = {}
    for p in pts:
        buckets.setdefault(tuple(np.floor(p / 0.1).astype(int)), []).append(p)
    oracle = np.array([np.mean(buckets[k], axis=0) for k in sorted(buckets)])
    assert len(out) <= 1000
    assert np.allclose(out.points, oracle, atol=1e-12)


def test_voxel_rejects_bad_leaf():
    with pytest.raises(ValueError):
        voxel_downsample(PointCloud(np.zeros((1, 3))), 0.0)


@given(arrays(float, (50, 3), elements=st.floats(-1, 1)), st.floats(0.01, 0.5))
def test_voxel_centroids_stay_near_inputs(pts, leaf):
    out = voxel_downsample(PointCloud(pts), leaf)
    d = np.min(np.linalg.norm(out.points[:, None] - pts[None], axis=2), axis=1)
    assert np.all(d <= leaf * np.sqrt(3) + 1e-12)


def test_nearest_examples():
    assert nearest(NnIndex(PointCloud([[1.0, 2.0, 3.0]])), [1.0, 2.0, 3.0]) == (0, 0.0)
    pts = np.random.default_rng(3).normal(size=(10, 3))
    pts[2] = [1.0, 0.0, 0.0]
    pts[7] = [-1.0, 0.0, 0.0]
    pts[[0, 1, 3, 4, 5, 6, 8, 9]] += 10.0
    assert nearest(NnIndex(PointCloud(pts)), [0.0, 0.0, 0.0])[0] == 2


def test_nearest_empty_cloud():
    with pytest.raises(InvalidStateError):
        nearest(NnIndex(PointCloud(np.zeros((0, 3)))), [0, 0, 0])


def _linear_scan(pts, q):
    d = np.linalg.norm(pts - q, axis=1)
    i = int(np.flatnonzero(d == d.min())[0])
    return i, d[i]


def test_nearest_matches_linear_scan():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(1000, 3))
    idx = NnIndex(PointCloud(pts))
    for q in rng.normal(size=(100, 3)):
        assert nearest(idx, q) == _linear_scan(pts, q)


@given(st.integers(0, 2**32 - 1))
def test_query_matches_linear_scan_on_integer_grid(seed):
    # small integer grids produce many exact ties
    rng = np.random.default_rng(seed)
    pts = rng.integers(-2, 3, (int(rng.integers(1, 40)), 3)).astype(float)
    qs = rng.integers(-3, 4, (10, 3)).astype(float) / 2
    idx, dist = NnIndex(PointCloud(pts)).query(qs)
    for q, i, d in zip(qs, idx, dist):
        assert (i, d) == _linear_scan(pts, q)


def test_random_subsample():
    c = PointCloud(np.random.default_rng(5).normal(size=(10000, 3)))
    assert random_subsample(c, 20000, 0) is c
    a, b = random_subsample(c, 100, 7), random_subsample(c, 100, 7)
    assert len(a) == 100
    assert np.array_equal(a.points, b.points)
    members = {tuple(p) for p in c.points}
    assert all(tuple(p) in members for p in a.points)
    with pytest.raises(ValueError):
        random_subsample(c, 0, 0)
