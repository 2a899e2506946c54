"""Point clouds: container, ASCII PLY I/O, voxel grid, subsampling, NN search."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidStateError, ParseError


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    view: int | None = None
    # Analytic surface normals, only carried by simulated scenes; never saved.
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            n = np.array(self.normals, dtype=float).reshape(-1, 3)
            if len(n) != len(pts):
                raise ValueError("normals must match points")
            n.setflags(write=False)
            object.__setattr__(self, "normals", n)

    def __len__(self):
        return len(self.points)

    def size(self):
        return len(self.points)

    def transformed(self, x):
        normals = None if self.normals is None else self.normals @ x.r.T
        return PointCloud(x.apply(self.points), self.view, normals)

    def select(self, idx):
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], self.view, normals)


class NnIndex:
    """Exact nearest-neighbour index; distance ties go to the lowest point index."""

    def __init__(self, cloud):
        self.points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    def query(self, q):
        """Nearest neighbour of every row of ``q``: returns (indices, distances)."""
        if self._tree is None:
            raise InvalidStateError("nearest-neighbour query on an empty cloud")
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if len(self.points) == 1:
            idx = np.zeros(len(q), dtype=np.int64)
        else:
            d, idx = self._tree.query(q, k=2)
            idx = idx[:, 0].astype(np.int64)
            # possible ties: resolve exactly against every point in the shell
            for row in np.flatnonzero(d[:, 1] - d[:, 0] <= 1e-12 * (1.0 + d[:, 0])):
                cand = np.asarray(self._tree.query_ball_point(q[row], d[row, 1] * (1 + 1e-9) + 1e-15))
                dist = np.linalg.norm(self.points[cand] - q[row], axis=1)
                best = cand[dist == dist.min()]
                idx[row] = best.min()
        dist = np.linalg.norm(self.points[idx] - q, axis=1)
        return idx, dist


def nearest(idx, q):
    i, d = idx.query(np.asarray(q, dtype=float)[None, :])
    return int(i[0]), float(d[0])


def load_cloud(path):
    """Read x, y, z from an ASCII PLY file, keeping file order."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read cloud: {exc}", path=path) from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", path=path, line=1)

    elements = []  # (name, count, [property names])
    fmt_ok = False
    body_start = None
    for ln, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 3 or tok[1] != "ascii":
                raise ParseError("only 'format ascii 1.0' is supported", path=path, line=ln)
            fmt_ok = True
        elif tok[0] == "element":
            try:
                elements.append((tok[1], int(tok[2]), []))
            except (IndexError, ValueError):
                raise ParseError(f"bad element line {raw!r}", path=path, line=ln) from None
        elif tok[0] == "property":
            if not elements or len(tok) < 3:
                raise ParseError(f"bad property line {raw!r}", path=path, line=ln)
            elements[-1][2].append(tok[-1] if tok[1] != "list" else None)
        elif tok[0] == "end_header":
            body_start = ln
            break
        else:
            raise ParseError(f"unexpected header line {raw!r}", path=path, line=ln)
    if body_start is None:
        raise ParseError("missing end_header", path=path)
    if not fmt_ok:
        raise ParseError("missing format line", path=path)

    pts = np.zeros((0, 3))
    row = body_start  # index into lines of the first body line
    for name, count, props in elements:
        if name != "vertex":
            row += count
            continue
        try:
            cols = [props.index(a) for a in "xyz"]
        except ValueError:
            raise ParseError("vertex element lacks x/y/z properties", path=path) from None
        if None in props:
            raise ParseError("list properties on vertices are not supported", path=path)
        pts = np.empty((count, 3))
        for j in range(count):
            ln = row + j + 1
            if row + j >= len(lines):
                raise ParseError(f"expected {count} vertices, file ends early", path=path, line=ln)
            tok = lines[row + j].split()
            if len(tok) < len(props):
                raise ParseError(f"expected {len(props)} values", path=path, line=ln)
            try:
                pts[j] = [float(tok[c]) for c in cols]
            except ValueError:
                raise ParseError(f"non-numeric coordinate in {lines[row + j]!r}", path=path, line=ln) from None
            if not np.all(np.isfinite(pts[j])):
                raise ParseError("non-finite coordinate", path=path, line=ln)
        break
    return PointCloud(pts)


def save_cloud(cloud, path):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    header = (
        "ply\nformat ascii 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    body = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist())
    Path(path).write_text(header + body)


def voxel_downsample(c, leaf):
    """Centroid per occupied voxel ``floor(p / leaf)``, ordered by voxel key."""
    if not leaf > 0:
        raise ValueError("voxel leaf size must be positive")
    if len(c) == 0:
        return PointCloud(np.zeros((0, 3)), c.view)
    keys = np.floor(c.points / leaf).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(float)
    out = np.empty((len(uniq), 3))
    for a in range(3):
        out[:, a] = np.bincount(inverse, weights=c.points[:, a], minlength=len(uniq)) / counts
    return PointCloud(out, c.view)


def random_subsample(c, k, seed):
    """``min(k, size)`` points without replacement, input order preserved."""
    if k < 1:
        raise ValueError("subsample size must be >= 1")
    if k >= len(c):
        return c
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(c), size=k, replace=False))
    return c.select(idx)
