"""Slow, independent reference computations for verification.

Nothing here calls the least-distance solver in :mod:`lhm.minimax` or the
assignment code in :mod:`lhm.latent`; each oracle reaches its answer by a
different route (sampling, grid search, subset enumeration, differencing)
so that agreement means something. Test-only: expect seconds, not
microseconds.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from lhm.minimax import ComponentModel, EmptyIntersectionError
from lhm.stats import GaussianStats

POLAR_ZOOM_LEVELS = 14
POLAR_ZOOM_POINTS = 41


def mc_gaussian_mass(model: ComponentModel, stats: GaussianStats, n: int, seed) -> float:
    """Fraction of ``n`` seeded draws from N(mean, covariance) that land in Q."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    Z = stats.mean + rng.standard_normal((n, stats.dim)) @ stats.cholesky.T
    inside = np.all(Z @ model.normals.T + model.biases >= 0, axis=1)
    return float(inside.mean())


def mc_tolerance(p: float, n: int) -> float:
    """Three binomial standard errors."""
    return 3.0 * np.sqrt(p * (1.0 - p) / n)


def _mahalanobis_sq(stats, P):
    U = np.linalg.solve(stats.cholesky, (P - stats.mean).T)
    return np.einsum("ij,ij->j", U, U)


def _cartesian(model, stats, resolution, extent):
    ticks = np.linspace(-extent, extent, resolution)
    best, best_val = None, np.inf
    # row blocks keep memory bounded for 2001 x 2001 grids
    for start in range(0, resolution, 256):
        gx, gy = np.meshgrid(ticks, ticks[start:start + 256])
        P = np.column_stack([gx.ravel(), gy.ravel()])
        ok = np.all(P @ model.normals.T + model.biases >= 0, axis=1)
        if not np.any(ok):
            continue
        vals = _mahalanobis_sq(stats, P[ok])
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best, best_val = P[ok][k], vals[k]
    if best is None:
        raise EmptyIntersectionError("no feasible grid point")
    return best


def _ray_entry(A, c, theta):
    """Smallest feasible radius along each whitened direction (inf where the ray misses Q)."""
    E = np.stack([np.cos(theta), np.sin(theta)])
    S = A @ E                                   # (K, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = c[:, None] / S
    lo = np.where(S > 0, ratio, 0.0).max(axis=0)
    lo = np.maximum(lo, 0.0)
    hi = np.where(S < 0, ratio, np.inf).min(axis=0)
    blocked = np.any((S == 0) & (c[:, None] > 0), axis=0)
    return np.where((lo <= hi) & ~blocked, lo, np.inf)


def _polar(model, stats, resolution):
    A = model.normals @ stats.cholesky
    c = -(model.normals @ stats.mean + model.biases)
    if np.all(c <= 0):
        return stats.mean.copy()
    theta = np.linspace(0.0, 2 * np.pi, resolution, endpoint=False)
    r = _ray_entry(A, c, theta)
    k = int(np.argmin(r))
    if not np.isfinite(r[k]):
        raise EmptyIntersectionError("no feasible grid point")
    t_best, r_best = theta[k], r[k]
    step = 2 * np.pi / resolution
    # the entry radius is unimodal over the arc of directions that meet Q
    for _ in range(POLAR_ZOOM_LEVELS):
        theta = np.linspace(t_best - step, t_best + step, POLAR_ZOOM_POINTS)
        r = _ray_entry(A, c, theta)
        k = int(np.argmin(r))
        if r[k] <= r_best:
            t_best, r_best = theta[k], r[k]
        step = 2 * step / (POLAR_ZOOM_POINTS - 1)
    u = r_best * np.array([np.cos(t_best), np.sin(t_best)])
    return stats.mean + stats.cholesky @ u


def grid_closest_point(model: ComponentModel, stats: GaussianStats, resolution: int | None = None,
                       method: str = "polar", extent: float = 10.0) -> np.ndarray:
    """Brute-force closest point of Q to the mean in the Sigma^-1 metric (2-D only).

    ``method="cartesian"`` scans a ``resolution`` x ``resolution`` grid over
    ``[-extent, extent]^2`` and is accurate to one cell. ``method="polar"``
    scans ``resolution`` whitened directions, intersects each ray with Q
    exactly, and zooms in around the best direction; its error is far below
    a cell, which is what tight distance comparisons need.
    """
    if model.dim != 2 or stats.dim != 2:
        raise ValueError("grid oracle is 2-D only")
    if method == "cartesian":
        return _cartesian(model, stats, resolution or 2001, extent)
    if method == "polar":
        return _polar(model, stats, resolution or 20000)
    raise ValueError(f"unknown method {method!r}")


def grid_d_squared(model, stats, **kw) -> float:
    x = grid_closest_point(model, stats, **kw)
    return float(_mahalanobis_sq(stats, x[None, :])[0])


def enumerate_closest_point(model: ComponentModel, stats: GaussianStats, feas_tol: float = 1e-9):
    """Exact closest point by trying every candidate active set of size <= d.

    Returns ``(point, d_squared)``. Exponential in K; fine for K <= 10.
    """
    A = model.normals @ stats.cholesky
    c = -(model.normals @ stats.mean + model.biases)
    scale = np.linalg.norm(A, axis=1)
    K, d = A.shape
    best_u, best = None, np.inf
    for size in range(0, min(K, d) + 1):
        for S in combinations(range(K), size):
            if size == 0:
                u = np.zeros(d)
            else:
                As, cs = A[list(S)], c[list(S)]
                u, *_ = np.linalg.lstsq(As, cs, rcond=None)
                if np.max(np.abs(As @ u - cs)) > feas_tol * max(1.0, np.max(np.abs(cs))):
                    continue
            if np.all(A @ u - c >= -feas_tol * np.maximum(scale, 1.0) * max(1.0, np.linalg.norm(u))):
                val = float(u @ u)
                if val < best:
                    best_u, best = u, val
    if best_u is None:
        raise EmptyIntersectionError()
    return stats.mean + stats.cholesky @ best_u, best


def brute_force_assign(x, model, stats: GaussianStats, cfg) -> int:
    """Reassignment objective for every component, rebuilt from scratch; lowest index wins ties."""
    x = np.asarray(x, dtype=float)
    values = []
    for comp in model.components:
        W, b = comp.normals, comp.biases.copy()
        proj = x @ W.T
        margins = proj + b
        if np.all(margins >= 0):
            dist = margins / np.linalg.norm(W, axis=1)
            j = int(np.argmin(dist))
            b[j] = -proj[j]
        else:
            for k in range(len(b)):
                if margins[k] < 0:
                    b[k] = -proj[k]
        _, d2 = enumerate_closest_point(ComponentModel(W, b), stats)
        hinge = max(0.0, float(np.max(cfg.alpha - margins)))
        values.append(1.0 / (1.0 + d2) + cfg.lam * hinge)
    lo = min(values)
    for i, v in enumerate(values):
        if v <= lo + 1e-12 * max(1.0, abs(lo)):
            return i


def finite_diff(fn, point, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    point = np.array(point, dtype=float)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = fn(point)
        flat[k] = orig - step
        down = fn(point)
        flat[k] = orig
        g[k] = (up - down) / (2 * step)
    return grad


# random instances shared by the verification suites

def random_stats(rng, d: int) -> GaussianStats:
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eig = rng.uniform(0.5, 2.0, d)
    return GaussianStats(rng.normal(0.0, 1.5, d), (Q * eig) @ Q.T)


def random_component(rng, d: int, K: int, anchor=None, zero_bias: bool = False) -> ComponentModel:
    """K random halfspaces that all contain ``anchor`` (so Q is nonempty)."""
    if anchor is None:
        anchor = rng.normal(0.0, 2.5, d)
    W = rng.standard_normal((K, d)) * rng.uniform(0.5, 2.0, (K, 1))
    if zero_bias:
        return ComponentModel(W, np.zeros(K))
    slack = rng.uniform(0.0, 1.5, K) * np.linalg.norm(W, axis=1)
    return ComponentModel(W, -(W @ anchor) + slack)


def random_lhm(rng, d: int, C: int, K: int):
    from lhm.latent import LhmModel
    return LhmModel([random_component(rng, d, K) for _ in range(C)])
