"""Least-squares alignment of multi-view point sets through the hand-eye transform.

Each correspondence ``(p, q)`` of motion ``i`` holds the same scene point seen
from the sensor at pose ``i`` and at pose ``i + 1``. The residual

    g = A_i X p - A_{i+1} X q

is driven to zero by perturbation Gauss-Newton steps on ``(phi, t)``, where
the rotation update is applied on the left: ``R <- exp(phi^) R``. The model
is re-linearised at zero perturbation after every update.

Motions are 0-based here: motion ``i`` pairs ``poses[i]`` and ``poses[i + 1]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateGeometryError
from .geom import RigidTransform, skew, so3_exp

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class Correspondence:
    p: np.ndarray
    q: np.ndarray
    motion: int


@dataclass(eq=False)
class CorrespondenceSet:
    p: np.ndarray
    q: np.ndarray
    motion: np.ndarray
    # distance of each pair in the reference frame when it was matched
    dist: np.ndarray | None = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 3)
        self.motion = np.asarray(self.motion, dtype=np.int64).reshape(-1)
        if not (len(self.p) == len(self.q) == len(self.motion)):
            raise ValueError("correspondence arrays must have equal length")

    @classmethod
    def from_items(cls, items):
        items = list(items)
        return cls(
            [c.p for c in items] or np.zeros((0, 3)),
            [c.q for c in items] or np.zeros((0, 3)),
            [c.motion for c in items],
        )

    def __len__(self):
        return len(self.motion)

    def __getitem__(self, j):
        return Correspondence(self.p[j], self.q[j], int(self.motion[j]))

    def counts(self, n_motions=None):
        """Per-motion correspondence counts m_i."""
        return np.bincount(self.motion, minlength=n_motions or 0)

    def subset(self, idx):
        dist = None if self.dist is None else self.dist[idx]
        return CorrespondenceSet(self.p[idx], self.q[idx], self.motion[idx], dist)


def residual(a_i, a_i1, x, c):
    """g_ij for a single correspondence."""
    rp = x.r @ c.p
    rq = x.r @ c.q
    return a_i.r @ (rp + x.t) + a_i.t - a_i1.r @ (rq + x.t) - a_i1.t


def jacobian(a_i, a_i1, x, c):
    """3x6 derivative of g_ij w.r.t. a left perturbation (phi, t) at zero."""
    j = np.empty((3, 6))
    j[:, :3] = -a_i.r @ skew(x.r @ c.p) + a_i1.r @ skew(x.r @ c.q)
    j[:, 3:] = a_i.r - a_i1.r
    return j


def _pose_stacks(poses, motion):
    r = np.stack([a.r for a in poses])
    t = np.stack([a.t for a in poses])
    return r[motion], t[motion], r[motion + 1], t[motion + 1]


def residuals(s, poses, x):
    """All residuals as an (m, 3) array."""
    ra, ta, rb, tb = _pose_stacks(poses, s.motion)
    wp = s.p @ x.r.T + x.t
    wq = s.q @ x.r.T + x.t
    return np.einsum("mij,mj->mi", ra, wp) + ta - np.einsum("mij,mj->mi", rb, wq) - tb


def jacobians(s, poses, x):
    """All Jacobians as an (m, 3, 6) array."""
    ra, _, rb, _ = _pose_stacks(poses, s.motion)
    xp = s.p @ x.r.T
    xq = s.q @ x.r.T
    # -R_a [xp]^ + R_b [xq]^ ; R [v]^ has columns R e_k x v = R (e_k x v)
    j = np.empty((len(s), 3, 6))
    j[:, :, :3] = -np.einsum("mij,mjk->mik", ra, _skew_stack(xp)) + np.einsum(
        "mij,mjk->mik", rb, _skew_stack(xq)
    )
    j[:, :, 3:] = ra - rb
    return j


def _skew_stack(v):
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -v[:, 2], v[:, 1]
    out[:, 1, 0], out[:, 1, 2] = v[:, 2], -v[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -v[:, 1], v[:, 0]
    return out


def objective(s, poses, x):
    """Sum of squared residual norms."""
    g = residuals(s, poses, x)
    return float(np.einsum("mi,mi->", g, g))


def normal_equations(s, poses, x):
    j = jacobians(s, poses, x)
    g = residuals(s, poses, x)
    h = np.einsum("mki,mkj->ij", j, j)
    b = -np.einsum("mki,mk->i", j, g)
    return h, b


def gauss_newton_step(s, poses, x):
    """Solve (sum J^T J) dx = -sum J^T g for dx = [dphi | dt]."""
    if len(s) == 0:
        raise ValueError("empty correspondence set")
    if len(poses) < 2:
        raise ValueError("need at least two poses")
    h, b = normal_equations(s, poses, x)
    h = 0.5 * (h + h.T)
    cond = np.linalg.cond(h)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise DegenerateGeometryError(
            f"normal matrix condition {cond:.3g} exceeds {MAX_CONDITION:g}; "
            "the robot motions do not pin down the hand-eye transform (see validate_poses)"
        )
    try:
        return cho_solve(cho_factor(h), b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError(f"normal matrix not positive definite: {exc}") from exc


def apply_update(x, dx):
    dx = np.asarray(dx, dtype=float)
    return RigidTransform(so3_exp(dx[:3]) @ x.r, x.t + dx[3:])


def single_step_alignment(s, poses, x):
    return apply_update(x, gauss_newton_step(s, poses, x))


@dataclass
class AlignResult:
    x: RigidTransform
    converged: bool
    iterations: int
    objective_history: list = field(default_factory=list)


def solve_alignment(s, poses, x0, xi=1e-10, max_iters=50):
    """Iterate Gauss-Newton steps until ``|dx| < xi``.

    ``objective_history[k]`` is the objective at the k-th iterate, starting
    with ``x0``. On hitting ``max_iters`` the lowest-objective iterate is
    returned with ``converged=False``.
    """
    x = x0
    hist = [objective(s, poses, x)]
    best = (hist[0], x)
    for it in range(1, max_iters + 1):
        dx = gauss_newton_step(s, poses, x)
        x = apply_update(x, dx)
        hist.append(objective(s, poses, x))
        if hist[-1] < best[0]:
            best = (hist[-1], x)
        if np.linalg.norm(dx) < xi:
            return AlignResult(x, True, it, hist)
    log.warning("alignment did not converge in %d iterations", max_iters)
    return AlignResult(best[1], False, max_iters, hist)
