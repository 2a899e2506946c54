"""Bayesian-optimisation initial alignment over the hand-eye twist.

``E(u)`` is modelled as a Gaussian process whose covariance uses a distance
on SE(3) (rotation geodesic plus a scaled translation gap) instead of the
Euclidean distance between twists, so that two twists encoding the same
rotation are fully correlated. New samples maximise expected improvement.

Smaller ``E`` is better everywhere in this module.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import ndtr

from .errors import NumericError
from .geom import rotation_distance_matrix, translation_distance_matrix
from .reg import error

log = logging.getLogger(__name__)

KERNELS = ("se3", "exp", "exp_ard", "matern52")
JITTER = 1e-8
EI_BUDGET = 200
EI_STEP_TOL = 1e-4
HYPER_STARTS = 5
# log-space bounds for (sigma, ell, alpha_t); ARD length scales share ell's bounds
SIGMA_BOUNDS = (1e-6, 1e2)
ELL_BOUNDS = (1e-3, 1e2)
ALPHA_BOUNDS = (1e-2, 1e3)


@dataclass(frozen=True)
class SearchBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != (6,) or hi.shape != (6,):
            raise ValueError("search box bounds must be 6-vectors")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("search box bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError("search box needs lower < upper in every coordinate")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def default(cls, half_extent=0.1, center=(0.0, 0.0, 0.0)):
        """``[-pi, pi]^3`` for rotation, a cube around ``center`` for translation."""
        c = np.asarray(center, dtype=float)
        return cls(np.r_[-np.pi * np.ones(3), c - half_extent], np.r_[np.pi * np.ones(3), c + half_extent])

    @property
    def width(self):
        return self.upper - self.lower

    def sample(self, rng, n):
        return self.lower + rng.uniform(size=(n, 6)) * self.width

    def contains(self, u):
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower) and np.all(u <= self.upper))

    def clip(self, u):
        return np.clip(u, self.lower, self.upper)


@dataclass(frozen=True)
class GpHyper:
    sigma: float = 1.0
    ell: float = 1.0
    alpha_t: float = 10.0
    # per-coordinate length scales, only read by the exp_ard baseline
    ell_ard: tuple | None = None

    def __post_init__(self):
        if not (self.sigma > 0 and self.ell > 0 and self.alpha_t > 0):
            raise ValueError("kernel hyperparameters must be positive")
        if self.ell_ard is not None:
            ard = tuple(float(v) for v in self.ell_ard)
            if len(ard) != 6 or min(ard) <= 0:
                raise ValueError("ell_ard needs six positive length scales")
            object.__setattr__(self, "ell_ard", ard)


def _pair_terms(kernel, a, b, hyper):
    """Kernel-specific distance between rows of ``a`` and ``b``."""
    if kernel == "se3":
        return rotation_distance_matrix(a[:, :3], b[:, :3]) + hyper.alpha_t**2 * translation_distance_matrix(
            a[:, 3:], b[:, 3:]
        )
    if kernel == "exp_ard":
        ell = np.asarray(hyper.ell_ard if hyper.ell_ard is not None else (hyper.ell,) * 6)
        diff = (a[:, None, :] - b[None, :, :]) / ell
        return np.einsum("ijk,ijk->ij", diff, diff)
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kernel_from_terms(kernel, d, hyper):
    s2 = hyper.sigma**2
    if kernel == "se3":
        return s2 * np.exp(-d / (2.0 * hyper.ell**2))
    if kernel == "exp":
        return s2 * np.exp(-d / (2.0 * hyper.ell**2))
    if kernel == "exp_ard":
        return s2 * np.exp(-0.5 * d)
    if kernel == "matern52":
        r = np.sqrt(5.0 * d) / hyper.ell
        return s2 * (1.0 + r + r * r / 3.0) * np.exp(-r)
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def kernel_matrix(a, b, hyper, kernel="se3"):
    """Covariances between the rows of two twist arrays."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return _kernel_from_terms(kernel, _pair_terms(kernel, a, b, hyper), hyper)


def kernel_se3(u1, u2, hyper):
    """sigma^2 exp(-d(u1, u2) / (2 ell^2)) with the SE(3) twist distance."""
    return float(kernel_matrix(u1, u2, hyper, "se3")[0, 0])


def kernel_euclidean(u1, u2, hyper):
    """Plain squared-exponential on raw twists; the wraparound-blind baseline."""
    return float(kernel_matrix(u1, u2, hyper, "exp")[0, 0])


@dataclass(frozen=True, eq=False)
class GpModel:
    """Noiseless GP over E(u) with a constant prior at the sample mean."""

    samples: np.ndarray
    values: np.ndarray
    hyper: GpHyper = field(default_factory=GpHyper)
    kernel: str = "se3"
    jitter: float = JITTER

    def __post_init__(self):
        u = np.array(self.samples, dtype=float).reshape(-1, 6)
        e = np.array(self.values, dtype=float).reshape(-1)
        if len(u) != len(e):
            raise ValueError("samples and values must have equal length")
        if len(u) == 0:
            raise ValueError("a GP model needs at least one sample")
        if not np.all(np.isfinite(e)):
            raise ValueError("observed values must be finite")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; expected one of {KERNELS}")
        u.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "samples", u)
        object.__setattr__(self, "values", e)
        k = self.gram()
        try:
            chol = cho_factor(k, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"GP gram matrix factorisation failed; increase jitter ({exc})") from exc
        object.__setattr__(self, "gram_chol", chol)
        # explicit L^-1 turns the variance term into one matrix product per batch
        object.__setattr__(self, "chol_inv", solve_triangular(chol[0], np.eye(len(u)), lower=True))
        object.__setattr__(self, "weights", cho_solve(chol, e - self.prior_mean))

    @property
    def prior_mean(self):
        return float(np.mean(self.values))

    @property
    def best(self):
        return float(np.min(self.values))

    def gram(self):
        k = kernel_matrix(self.samples, self.samples, self.hyper, self.kernel)
        k = 0.5 * (k + k.T)
        k[np.diag_indices_from(k)] += self.jitter * self.hyper.sigma**2
        return k

    def with_hyper(self, hyper):
        return replace(self, hyper=hyper)

    def add(self, u, e):
        return replace(self, samples=np.vstack([self.samples, u]), values=np.append(self.values, e))


def gp_posterior_batch(model, us):
    """Posterior means and variances at the rows of ``us``."""
    us = np.atleast_2d(np.asarray(us, dtype=float))
    k = kernel_matrix(us, model.samples, model.hyper, model.kernel)
    mean = k @ model.weights + model.prior_mean
    v = k @ model.chol_inv.T
    var = model.hyper.sigma**2 - np.einsum("ij,ij->i", v, v)
    return mean, np.maximum(var, 0.0)


def gp_posterior(model, u):
    mean, var = gp_posterior_batch(model, u)
    return float(mean[0]), float(var[0])


def ei_closed_form(mu, sd, best):
    """E[max(best - E, 0)] for E ~ N(mu, sd^2); zero where sd == 0."""
    mu, sd = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sd, dtype=float))
    out = np.zeros(mu.shape)
    pos = sd > 0
    z = (best - mu[pos]) / sd[pos]
    out[pos] = (best - mu[pos]) * ndtr(z) + sd[pos] * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return np.maximum(out, 0.0)


def expected_improvement_batch(model, us):
    mean, var = gp_posterior_batch(model, us)
    return ei_closed_form(mean, np.sqrt(var), model.best)


def expected_improvement(model, u):
    return float(expected_improvement_batch(model, u)[0])


def compass_search(f, x0, lower, upper, step0, tol=EI_STEP_TOL, max_rounds=500, grow=1.0):
    """Batched maximisation of ``f`` by adaptive coordinate (compass) search.

    Every row of ``x0`` is refined independently: all 2d axis moves are
    probed at once, the best strict improvement is taken, and when none
    exists the step halves. A row stops once its step is below ``tol`` in
    every coordinate. ``f`` maps an (m, d) array to m values.
    """
    x = np.array(x0, dtype=float)
    n, dim = x.shape
    fx = f(x)
    step = np.tile(np.asarray(step0, dtype=float), (n, 1))
    active = np.ones(n, dtype=bool)
    moves = np.vstack([np.eye(dim), -np.eye(dim)])
    for _ in range(max_rounds):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        cand = x[idx, None, :] + moves[None, :, :] * step[idx, None, :]
        cand = np.clip(cand, lower, upper)
        fc = f(cand.reshape(-1, dim)).reshape(len(idx), 2 * dim)
        j = np.argmax(fc, axis=1)
        gain = fc[np.arange(len(idx)), j] > fx[idx]
        up = idx[gain]
        x[up] = cand[gain, j[gain]]
        fx[up] = fc[gain, j[gain]]
        step[up] *= grow
        down = idx[~gain]
        step[down] *= 0.5
        active[down] = np.any(step[down] >= tol, axis=1)
    return x, fx


def maximize_ei(model, box, budget=EI_BUDGET, seed=0):
    """Best EI point over ``budget`` uniform starts refined by compass search."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    starts = box.sample(rng, budget)
    x, fx = compass_search(
        lambda us: expected_improvement_batch(model, us), starts, box.lower, box.upper, 0.1 * box.width
    )
    return x[int(np.argmax(fx))]


def _hyper_vector(kernel, h):
    if kernel == "se3":
        return np.log([h.sigma, h.ell, h.alpha_t])
    if kernel == "exp_ard":
        ard = h.ell_ard if h.ell_ard is not None else (h.ell,) * 6
        return np.log([h.sigma, *ard])
    return np.log([h.sigma, h.ell])


def _hyper_from_vector(kernel, v, base):
    v = np.exp(v)
    if kernel == "se3":
        return GpHyper(v[0], v[1], v[2])
    if kernel == "exp_ard":
        return GpHyper(v[0], base.ell, base.alpha_t, tuple(v[1:]))
    return GpHyper(v[0], v[1], base.alpha_t)


def _hyper_bounds(kernel):
    if kernel == "se3":
        b = [SIGMA_BOUNDS, ELL_BOUNDS, ALPHA_BOUNDS]
    elif kernel == "exp_ard":
        b = [SIGMA_BOUNDS] + [ELL_BOUNDS] * 6
    else:
        b = [SIGMA_BOUNDS, ELL_BOUNDS]
    b = np.log(np.array(b))
    return b[:, 0], b[:, 1]


def log_marginal_likelihood(model, hyper=None):
    """log p(E | u, hyper) of the noiseless GP; -inf if K will not factor."""
    m = model if hyper is None else None
    if m is None:
        try:
            m = model.with_hyper(hyper)
        except NumericError:
            return -math.inf
    r = m.values - m.prior_mean
    logdet = 2.0 * np.sum(np.log(np.diag(m.gram_chol[0])))
    return float(-0.5 * r @ m.weights - 0.5 * logdet - 0.5 * len(r) * math.log(2.0 * math.pi))


class _Likelihood:
    """Vectorised-over-candidates likelihood with the pairwise distances cached."""

    def __init__(self, model):
        self.kernel = model.kernel
        self.base = model.hyper
        self.jitter = model.jitter
        u = model.samples
        self.r = model.values - model.prior_mean
        self.n = len(u)
        if self.kernel == "se3":
            self.rot = rotation_distance_matrix(u[:, :3], u[:, :3])
            self.trans = translation_distance_matrix(u[:, 3:], u[:, 3:])
        else:
            self.diff2 = (u[:, None, :] - u[None, :, :]) ** 2

    def gram(self, h):
        if self.kernel == "se3":
            d = self.rot + h.alpha_t**2 * self.trans
        elif self.kernel == "exp_ard":
            d = self.diff2 @ (1.0 / np.asarray(h.ell_ard) ** 2)
        else:
            d = self.diff2.sum(axis=2)
        k = _kernel_from_terms(self.kernel, d, h)
        k[np.diag_indices_from(k)] += self.jitter * h.sigma**2
        return k

    def __call__(self, v):
        h = _hyper_from_vector(self.kernel, v, self.base)
        try:
            c, low = cho_factor(self.gram(h), lower=True)
        except np.linalg.LinAlgError:
            return -math.inf
        alpha = cho_solve((c, low), self.r)
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        return float(-0.5 * self.r @ alpha - 0.5 * logdet - 0.5 * self.n * math.log(2.0 * math.pi))

    def batch(self, vs):
        return np.array([self(v) for v in vs])


def optimize_hyperparams(model, seed=0, starts=HYPER_STARTS):
    """Maximum-likelihood (sigma, ell, alpha_t) by log-space compass search.

    Starts from the incumbent plus ``starts - 1`` random points inside the
    bounds. The incumbent is returned unless a strictly better likelihood
    is found.
    """
    if len(model.values) < 2:
        raise ValueError("hyperparameter fitting needs at least two samples")
    lik = _Likelihood(model)
    lo, hi = _hyper_bounds(model.kernel)
    v0 = np.clip(_hyper_vector(model.kernel, model.hyper), lo, hi)
    rng = np.random.default_rng(seed)
    x0 = np.vstack([v0, lo + rng.uniform(size=(starts - 1, len(lo))) * (hi - lo)])
    x, fx = compass_search(lik.batch, x0, lo, hi, 0.1 * (hi - lo))
    incumbent = lik(_hyper_vector(model.kernel, model.hyper))
    j = int(np.argmax(fx))
    if not np.isfinite(fx[j]):
        log.warning("no candidate hyperparameters gave a factorisable gram matrix; keeping the incumbent")
        return model.hyper
    if fx[j] <= incumbent:
        return model.hyper
    return _hyper_from_vector(model.kernel, x[j], model.hyper)


def initial_hyper(values, box):
    """Data-scaled starting point: sigma from the spread of E, ell ~ 1 rad."""
    sd = float(np.std(values))
    sigma = float(np.clip(sd if sd > 0 else 1.0, *SIGMA_BOUNDS))
    alpha = float(np.clip(1.0 / math.sqrt(np.mean(box.width[3:])), *ALPHA_BOUNDS))
    return GpHyper(sigma, 1.0, alpha)


@dataclass
class BoResult:
    u: np.ndarray
    best_mse: float
    samples: np.ndarray
    values: np.ndarray
    hyper: GpHyper


def bo_ia_search(prob, box=None, n0=50, n_total=100, period=10, seed=0, kernel="se3", ei_budget=EI_BUDGET):
    """BO-IA search returning the full sample trace.

    ``E`` is evaluated on a random subset of every cloud. Hyperparameters
    are fitted once after the random phase and then every ``period`` new
    samples.
    """
    box = SearchBox.default() if box is None else box
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    if n0 > n_total:
        raise ValueError("n0 must not exceed the total sample count")
    if period < 1:
        raise ValueError("period must be >= 1")
    coarse = prob.coarse(seed)
    rng = np.random.default_rng(seed)

    def objective(u):
        return error(coarse, u)[0]

    us = box.sample(rng, n0)
    es = np.array([objective(u) for u in us])
    hyper = initial_hyper(es, box)
    model = None
    n = n0
    while n < n_total:
        n += 1
        if model is None:
            model = GpModel(us, es, hyper, kernel)
            hyper = optimize_hyperparams(model, seed=int(rng.integers(2**31)))
        elif (n - n0) % period == 0:
            hyper = optimize_hyperparams(model.with_hyper(hyper), seed=int(rng.integers(2**31)))
        model = GpModel(us, es, hyper, kernel)
        u_next = maximize_ei(model, box, ei_budget, seed=int(rng.integers(2**31)))
        us = np.vstack([us, u_next])
        es = np.append(es, objective(u_next))
    j = int(np.argmin(es))
    return BoResult(us[j].copy(), float(es[j]), us, es, hyper)


def run_bo_ia(prob, box=None, n0=50, n_total=100, period=10, seed=0, kernel="se3", ei_budget=EI_BUDGET):
    """Twist with the best observed E(u) after ``n_total`` samples."""
    return bo_ia_search(prob, box, n0, n_total, period, seed, kernel, ei_budget).u


def random_search(prob, box=None, n=100, seed=0):
    """Best of ``n`` uniform samples of E on the same coarse clouds BO-IA uses."""
    box = SearchBox.default() if box is None else box
    coarse = prob.coarse(seed)
    us = box.sample(np.random.default_rng([seed, 1]), n)
    es = np.array([error(coarse, u)[0] for u in us])
    j = int(np.argmin(es))
    return BoResult(us[j].copy(), float(es[j]), us, es, None)
