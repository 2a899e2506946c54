"""Multi-view ICP over the hand-eye transform, plain and Anderson accelerated.

The fixed-point map ``G`` places every cloud in the reference frame through
``A_i X(u)`` and matches adjacent views by closest point. After trimming the
worst pairs it takes one Gauss-Newton alignment step on ``X``.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .align import CorrespondenceSet, residuals, single_step_alignment
from .cloud import NnIndex, PointCloud, random_subsample
from .errors import InvalidStateError
from .geom import RigidTransform, pack, pack_near, unpack

DEFAULT_EPSILON = 1e-4
DEFAULT_TRIM = 0.9
DEFAULT_HISTORY = 4
DEFAULT_MAX_ITERS = 100
DEFAULT_COARSE_SUBSET = 2000
TIKHONOV = 1e-10


class Mode(str, enum.Enum):
    EYE_IN_HAND = "eye_in_hand"
    EYE_TO_HAND = "eye_to_hand"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).replace("-", "_"))


def prepare_poses(raw, mode):
    """Eye-to-hand registration runs in the flange frame on inverted poses."""
    if Mode.parse(mode) is Mode.EYE_TO_HAND:
        return [a.inverse() for a in raw]
    return list(raw)


@dataclass(eq=False)
class CalibrationProblem:
    """n + 1 sensor-frame clouds with the poses used to place them.

    For eye-to-hand runs ``poses`` must already be inverted robot poses, so
    registration happens in the flange frame.
    """

    clouds: list
    poses: list
    mode: Mode = Mode.EYE_IN_HAND
    trim_ratio: float = DEFAULT_TRIM
    epsilon: float = DEFAULT_EPSILON
    history_len: int = DEFAULT_HISTORY
    coarse_subset_size: int = DEFAULT_COARSE_SUBSET
    per_pair_trim: bool = False
    # optional per-component weights for the convergence norm
    norm_weights: np.ndarray | None = None

    def __post_init__(self):
        self.clouds = [c if isinstance(c, PointCloud) else PointCloud(c) for c in self.clouds]
        self.poses = list(self.poses)
        self.mode = Mode.parse(self.mode)
        if len(self.clouds) != len(self.poses):
            raise ValueError(f"{len(self.clouds)} clouds but {len(self.poses)} poses")
        if len(self.clouds) < 3:
            raise ValueError("need at least 3 views (2 motions); a single motion is degenerate")
        for i, c in enumerate(self.clouds):
            if len(c) == 0:
                raise ValueError(f"cloud {i} is empty")
        if not 0 < self.trim_ratio <= 1:
            raise ValueError("trim_ratio must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        if self.coarse_subset_size < 1:
            raise ValueError("coarse_subset_size must be >= 1")

    @property
    def n_motions(self):
        return len(self.clouds) - 1

    @cached_property
    def indexes(self):
        return [NnIndex(c) for c in self.clouds]

    def coarse(self, seed=0):
        """Copy with every cloud randomly cut down to ``coarse_subset_size``."""
        clouds = [random_subsample(c, self.coarse_subset_size, seed + i) for i, c in enumerate(self.clouds)]
        return CalibrationProblem(
            clouds, self.poses, self.mode, self.trim_ratio, self.epsilon, self.history_len,
            self.coarse_subset_size, self.per_pair_trim, self.norm_weights,
        )


def _keep_count(ratio, total):
    return min(total, math.ceil(round(ratio * total, 9)))


def correspondence_step(prob, u):
    """Closest-point pairs between adjacent views, trimmed by ``trim_ratio``.

    Points of the smaller cloud of each pair query the larger one. Returned
    ``p``/``q`` stay in their own sensor frames.
    """
    x = unpack(u)
    sensors = [a @ x for a in prob.poses]
    ps, qs, ms, ds = [], [], [], []
    for i in range(prob.n_motions):
        a, b = prob.clouds[i], prob.clouds[i + 1]
        if len(a) == 0 or len(b) == 0:
            raise InvalidStateError(f"empty cloud in pair {i}")
        if len(a) <= len(b):
            rel = sensors[i + 1].inverse() @ sensors[i]
            idx, d = prob.indexes[i + 1].query(rel.apply(a.points))
            p, q = a.points, b.points[idx]
        else:
            rel = sensors[i].inverse() @ sensors[i + 1]
            idx, d = prob.indexes[i].query(rel.apply(b.points))
            p, q = a.points[idx], b.points
        ps.append(p)
        qs.append(q)
        ms.append(np.full(len(d), i))
        ds.append(d)
    s = CorrespondenceSet(np.concatenate(ps), np.concatenate(qs), np.concatenate(ms), np.concatenate(ds))
    if prob.per_pair_trim:
        keep = []
        for i in range(prob.n_motions):
            rows = np.flatnonzero(s.motion == i)
            order = np.argsort(s.dist[rows], kind="stable")
            keep.append(rows[order[: _keep_count(prob.trim_ratio, len(rows))]])
        keep = np.concatenate(keep)
    else:
        order = np.argsort(s.dist, kind="stable")
        keep = order[: _keep_count(prob.trim_ratio, len(s))]
    return s.subset(np.sort(keep))


def mse(prob, u, s):
    """Mean squared residual of ``s`` under the transform encoded by ``u``."""
    if len(s) == 0:
        raise ValueError("mse of an empty correspondence set")
    g = residuals(s, prob.poses, unpack(u))
    return float(np.einsum("mi,mi->", g, g) / len(s))


def error(prob, u):
    """E(u): MSE of the correspondences that ``u`` itself determines."""
    s = correspondence_step(prob, u)
    return mse(prob, u, s), s


def g_call(prob, u):
    """One fixed-point map application in twist coordinates."""
    s = correspondence_step(prob, u)
    return pack_near(single_step_alignment(s, prob.poses, unpack(u)), u)


def anderson_coefficients(f_hist):
    """Affine weights minimising ``|sum_i a_i f_i|`` subject to ``sum a_i = 1``.

    ``f_hist`` is ordered oldest to newest. The constraint is removed by
    substituting the newest weight; rank-deficient systems get a tiny
    Tikhonov term instead of failing.
    """
    f = np.atleast_2d(np.asarray(f_hist, dtype=float))
    m = len(f) - 1
    if m == 0:
        return np.ones(1)
    d = (f[:m] - f[m]).T  # columns f_i - f_m
    h = d.T @ d
    rhs = -d.T @ f[m]
    if np.linalg.matrix_rank(d) < m:
        scale = max(np.trace(h) / m, np.finfo(float).tiny)
        a = np.linalg.solve(h + TIKHONOV * scale * np.eye(m), rhs)
    else:
        a = np.linalg.lstsq(d, -f[m], rcond=None)[0]
    return np.append(a, 1.0 - a.sum())


def anderson_step(g_hist, alpha):
    g = np.atleast_2d(np.asarray(g_hist, dtype=float))
    alpha = np.asarray(alpha, dtype=float)
    if len(g) != len(alpha):
        raise ValueError(f"{len(g)} map outputs but {len(alpha)} coefficients")
    return alpha @ g


@dataclass
class RegResult:
    x: RigidTransform
    converged: bool
    iterations: int
    g_calls: int
    mse_history: list = field(default_factory=list)
    elapsed: float = 0.0
    u_history: list = field(default_factory=list)
    resets: int = 0

    @property
    def u(self):
        return pack(self.x)


def _norm(prob, f):
    w = prob.norm_weights
    return float(np.linalg.norm(f if w is None else f * w))


def run_aa_icpv(prob, u0, max_iters=DEFAULT_MAX_ITERS, history_len=None):
    """Anderson-accelerated multi-view ICP with MSE safeguarding.

    ``g_calls`` counts correspondence estimations, which dominate the cost:
    every G call needs one, and so does checking a rejected accelerated
    iterate. ``mse_history`` lists ``E`` of each accepted iterate.
    """
    start = time.perf_counter()
    l = prob.history_len if history_len is None else int(history_len)
    if l < 0:
        raise ValueError("history_len must be >= 0")
    u0 = np.asarray(u0, dtype=float)

    s = correspondence_step(prob, u0)
    e0 = mse(prob, u0, s)
    g_seq = [pack_near(single_step_alignment(s, prob.poses, unpack(u0)), u0)]
    f_seq = [g_seq[0] - u0]
    u_seq = [u0, g_seq[0]]
    mse_hist = [e0]
    best = (e0, u0)
    calls, resets = 1, 0
    k, k_start, e_prev = 1, 0, math.inf
    converged = False

    while calls < max_iters:
        s = correspondence_step(prob, u_seq[k])
        e = mse(prob, u_seq[k], s)
        calls += 1
        if e < best[0]:
            best = (e, u_seq[k])
        # nothing to revert when the iterate already is the last map output
        if e > e_prev and not np.array_equal(u_seq[k], g_seq[k - 1]):
            k_start = k - 1
            u_seq[k] = g_seq[k - 1]
            e_prev = math.inf
            resets += 1
            continue
        e_prev = e
        mse_hist.append(e)
        g_seq.append(pack_near(single_step_alignment(s, prob.poses, unpack(u_seq[k])), u_seq[k]))
        f_seq.append(g_seq[k] - u_seq[k])
        if _norm(prob, f_seq[k]) < prob.epsilon:
            converged = True
            break
        m = min(k - k_start, l)
        alpha = anderson_coefficients(f_seq[k - m : k + 1])
        u_seq.append(anderson_step(g_seq[k - m : k + 1], alpha))
        k += 1

    x = unpack(g_seq[-1]) if converged else unpack(best[1])
    return RegResult(
        x, converged, k, calls, mse_hist, time.perf_counter() - start,
        [np.array(v) for v in u_seq], resets,
    )


def run_plain_icpv(prob, u0, max_iters=DEFAULT_MAX_ITERS):
    """Repeated G calls until consecutive iterates differ by less than epsilon."""
    start = time.perf_counter()
    u = np.asarray(u0, dtype=float)
    u_hist = [u]
    mse_hist = []
    best = (math.inf, u)
    converged = False
    calls = 0
    while calls < max_iters:
        s = correspondence_step(prob, u)
        e = mse(prob, u, s)
        calls += 1
        mse_hist.append(e)
        if e < best[0]:
            best = (e, u)
        u_next = pack_near(single_step_alignment(s, prob.poses, unpack(u)), u)
        u_hist.append(u_next)
        step = _norm(prob, u_next - u)
        u = u_next
        if step < prob.epsilon:
            converged = True
            break
    x = unpack(u) if converged else unpack(best[1])
    return RegResult(x, converged, calls, calls, mse_hist, time.perf_counter() - start, u_hist)
