"""Worst-case negative mass inside an intersection of halfspaces.

For any distribution with mean ``mu`` and covariance ``Sigma`` the largest
probability it can put inside ``Q = {x : w_j.x + b_j >= 0 for all j}`` is
``1 / (1 + d2)``, where ``d2`` is the squared Mahalanobis distance from
``mu`` to ``Q``. Computing ``d2`` is a least-distance problem; after
whitening with the Cholesky factor of ``Sigma`` it becomes the Euclidean
projection of the origin onto a polyhedron, which we solve with the
Lawson-Hanson least-distance-programming reduction to NNLS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from lhm.stats import GaussianStats

ACTIVE_TOL = 1e-6
SV_FLOOR = 1e-10
QP_MAX_ITER = 10_000
QP_TOL = 1e-8


class EmptyIntersectionError(ValueError):
    def __init__(self, msg="empty intersection"):
        super().__init__(msg)


class QPConvergenceError(RuntimeError):
    """The least-distance solve did not converge; ``best`` holds the last iterate."""

    def __init__(self, best):
        super().__init__("closest-point QP did not converge")
        self.best = best


@dataclass(frozen=True)
class Hyperplane:
    normal: np.ndarray
    bias: float

    def __post_init__(self):
        normal = np.array(self.normal, dtype=float).reshape(-1)
        if not np.all(np.isfinite(normal)) or not np.isfinite(self.bias):
            raise ValueError("hyperplane has non-finite parameters")
        if not np.linalg.norm(normal) > 0:
            raise ValueError("hyperplane normal must be nonzero")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "bias", float(self.bias))

    def margin(self, x):
        return np.asarray(x, dtype=float) @ self.normal + self.bias


class ComponentModel:
    """Intersection of K positive halfspaces, stored as a (K, d) normal matrix and K biases."""

    __slots__ = ("normals", "biases")

    def __init__(self, normals, biases):
        W = np.array(normals, dtype=float)
        if W.ndim == 1:
            W = W.reshape(1, -1)
        b = np.array(biases, dtype=float).reshape(-1)
        if W.ndim != 2 or W.shape[0] < 1 or W.shape[1] < 1:
            raise ValueError("a component needs at least one hyperplane")
        if b.shape[0] != W.shape[0]:
            raise ValueError("one bias per hyperplane required")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("hyperplane has non-finite parameters")
        if np.any(np.linalg.norm(W, axis=1) == 0):
            raise ValueError("hyperplane normal must be nonzero")
        W.setflags(write=False)
        b.setflags(write=False)
        self.normals = W
        self.biases = b

    @classmethod
    def from_hyperplanes(cls, hyperplanes):
        hyperplanes = list(hyperplanes)
        if not hyperplanes:
            raise ValueError("a component needs at least one hyperplane")
        dims = {h.normal.shape[0] for h in hyperplanes}
        if len(dims) != 1:
            raise ValueError("hyperplanes differ in dimension")
        return cls([h.normal for h in hyperplanes], [h.bias for h in hyperplanes])

    @property
    def hyperplanes(self) -> list[Hyperplane]:
        return [Hyperplane(w, b) for w, b in zip(self.normals, self.biases)]

    @property
    def K(self) -> int:
        return self.normals.shape[0]

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    def margins(self, X) -> np.ndarray:
        """Raw margins w_j.x + b_j; shape (K,) for one point or (n, K) for a batch."""
        return np.asarray(X, dtype=float) @ self.normals.T + self.biases

    def value(self, X):
        """min_j of the margins: nonnegative exactly on Q."""
        return self.margins(X).min(axis=-1)

    def contains(self, X):
        return self.value(X) >= 0

    def with_bias(self, j: int, bias: float) -> "ComponentModel":
        b = self.biases.copy()
        b[j] = bias
        return ComponentModel(self.normals, b)

    def append(self, normal, bias) -> "ComponentModel":
        return ComponentModel(np.vstack([self.normals, normal]), np.append(self.biases, bias))

    def __eq__(self, other):
        if not isinstance(other, ComponentModel):
            return NotImplemented
        return (self.normals.shape == other.normals.shape
                and np.array_equal(self.normals, other.normals)
                and np.array_equal(self.biases, other.biases))

    def __repr__(self):
        return f"ComponentModel(K={self.K}, d={self.dim})"


@dataclass(frozen=True)
class MinimaxResult:
    probability: float
    d_squared: float
    closest_point: np.ndarray
    active_set: tuple[int, ...]


@dataclass(frozen=True)
class MinimaxGradient:
    normals: np.ndarray     # (K, d): d probability / d w_j
    biases: np.ndarray      # (K,):   d probability / d b_j
    degenerate: bool = False


def _check(model: ComponentModel, stats: GaussianStats):
    if model.dim != stats.dim:
        raise ValueError(f"model dimension {model.dim} != stats dimension {stats.dim}")


def _whitened(model, stats):
    # constraint j in whitened coordinates u = L^-1 (x - mu): a_j . u >= c_j
    A = model.normals @ stats.cholesky
    c = -(model.normals @ stats.mean + model.biases)
    return A, c


def _dual_projected_gradient(A, c):
    """Fallback solver: projected gradient on the dual of min |u|^2 s.t. A u >= c."""
    G = A @ A.T
    step = 1.0 / max(np.linalg.norm(G, 2), 1e-300)
    nu = np.zeros(A.shape[0])
    for _ in range(QP_MAX_ITER):
        nu_new = np.maximum(0.0, nu + step * (c - G @ nu))
        if np.max(np.abs(nu_new - nu)) <= QP_TOL * max(1.0, np.max(np.abs(nu_new))):
            return A.T @ nu_new
        nu = nu_new
    raise QPConvergenceError(A.T @ nu)


def _least_distance(A, c):
    """Minimum-norm u with A u >= c (Lawson & Hanson, LDP via NNLS)."""
    scale = np.linalg.norm(A, axis=1)
    An = A / scale[:, None]
    cn = c / scale
    d = A.shape[1]
    E = np.vstack([An.T, cn[None, :]])
    f = np.zeros(d + 1)
    f[d] = 1.0
    try:
        nu, _ = nnls(E, f, maxiter=50 * E.shape[1] + 100)
    except RuntimeError:
        return _dual_projected_gradient(An, cn)
    r = E @ nu - f
    if -r[d] <= 1e-13:
        raise EmptyIntersectionError()
    return -r[:d] / r[d]


def _active(model, x, tol):
    m = model.margins(x)
    norms = np.linalg.norm(model.normals, axis=1)
    return tuple(int(j) for j in np.flatnonzero(np.abs(m) <= tol * norms))


def closest_point_in_intersection(model: ComponentModel, stats: GaussianStats, tol: float = ACTIVE_TOL):
    """Point of Q closest to the mean in the Sigma^-1 metric, and the constraints active there."""
    _check(model, stats)
    A, c = _whitened(model, stats)
    if np.all(c <= 0):
        return stats.mean.copy(), ()
    u = _least_distance(A, c)
    L = stats.cholesky
    x = stats.mean + L @ u
    active = _active(model, x, tol)
    if active:
        # polish: exact projection onto the affine hull of the active constraints
        S = list(active)
        As, cs = A[S], c[S]
        u_p = As.T @ (np.linalg.pinv(As @ As.T, rcond=SV_FLOOR) @ cs)
        x_p = stats.mean + L @ u_p
        norms = np.linalg.norm(model.normals, axis=1)
        if np.all(model.margins(x_p) >= -1e-9 * norms) and u_p @ u_p <= u @ u * (1 + 1e-9) + 1e-300:
            x = x_p
            active = _active(model, x, tol)
    return x, active


def closed_form_d_squared(model: ComponentModel, stats: GaussianStats, active) -> float:
    """``r^T (W~^T Sigma W~)^+ r`` with ``r = W~^T mu + b~`` over the active hyperplanes.

    With zero biases this is exactly ``mu^T W~ (W~^T Sigma W~)^-1 W~^T mu``; a
    bias is the weight on a constant-1 feature of zero variance.
    """
    S = list(active)
    if not S:
        return 0.0
    Wt = model.normals[S].T
    r = Wt.T @ stats.mean + model.biases[S]
    M = Wt.T @ stats.covariance @ Wt
    return float(r @ np.linalg.pinv(M, rcond=SV_FLOOR) @ r)


def minimax_probability(model: ComponentModel, stats: GaussianStats, tol: float = ACTIVE_TOL) -> MinimaxResult:
    x, active = closest_point_in_intersection(model, stats, tol)
    if not active and np.array_equal(x, stats.mean):
        return MinimaxResult(1.0, 0.0, x, ())
    u = np.linalg.solve(stats.cholesky, x - stats.mean)
    d2 = float(u @ u)
    return MinimaxResult(1.0 / (1.0 + d2), d2, x, active)


def minimax_gradient(model: ComponentModel, stats: GaussianStats, result: MinimaxResult | None = None) -> MinimaxGradient:
    """Gradient of ``1/(1+d2)`` with respect to every hyperplane's (normal, bias).

    Sensitivity analysis of the least-distance problem: with multipliers
    ``lam = -2 M^+ r`` on the active set, ``dd2/db_j = -lam_j`` and
    ``dd2/dw_j = -lam_j x*``. Rank-deficient active sets go through the
    pseudo-inverse and set ``degenerate``.
    """
    if result is None:
        result = minimax_probability(model, stats)
    gW = np.zeros_like(model.normals)
    gb = np.zeros_like(model.biases)
    S = list(result.active_set)
    if not S:
        return MinimaxGradient(gW, gb, False)
    Wt = model.normals[S].T
    r = Wt.T @ stats.mean + model.biases[S]
    M = Wt.T @ stats.covariance @ Wt
    sv = np.linalg.svd(M, compute_uv=False)
    degenerate = bool(sv[-1] <= SV_FLOOR * sv[0])
    lam = -2.0 * (np.linalg.pinv(M, rcond=SV_FLOOR) @ r)
    p2 = result.probability ** 2
    gb[S] = p2 * lam
    gW[S] = p2 * lam[:, None] * result.closest_point[None, :]
    return MinimaxGradient(gW, gb, degenerate)
