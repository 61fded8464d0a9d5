"""Negative-class mean/covariance estimation.

The minimax risk only sees the background distribution through its first
two moments, so everything downstream takes a :class:`GaussianStats`.
Estimates are immutable and cheap to share between workers; compute the
global one once and pass it to every per-class trainer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# default ridge is this fraction of the average variance
RIDGE_FRACTION = 1e-4


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int = 0
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("invalid data")
        scale = max(np.abs(cov).max(), 1e-300)
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive definite; pass ridge > 0") from None
        mean.setflags(write=False)
        cov.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def cholesky(self) -> np.ndarray:
        """Lower-triangular L with L @ L.T == covariance."""
        return self._chol


def _as_samples(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError("no samples")
    if not np.all(np.isfinite(X)):
        raise ValueError("invalid data")
    return X


def default_ridge(cov: np.ndarray) -> float:
    d = cov.shape[0]
    return RIDGE_FRACTION * float(np.trace(cov)) / d


def estimate_gaussian(X, ridge: float | None = None) -> GaussianStats:
    """Column mean and unbiased covariance of ``X`` plus ``ridge * I``.

    ``ridge=None`` picks ``1e-4 * trace / d`` from the raw estimate. A
    single sample gives a zero covariance, which only survives validation
    when a positive ridge is added.
    """
    X = _as_samples(X)
    m, d = X.shape
    mean = X.mean(axis=0)
    if m > 1:
        centered = X - mean
        cov = centered.T @ centered / (m - 1)
    else:
        cov = np.zeros((d, d))
    if ridge is None:
        ridge = default_ridge(cov)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    cov = cov + ridge * np.eye(d)
    return GaussianStats(mean, cov, m)


def refine_negative_stats(model, X_neg, fallback: GaussianStats, min_count: int | None = None,
                          ridge: float | None = None) -> GaussianStats:
    """Re-estimate the background moments from the negatives that fall inside ``model``.

    Falls back to ``fallback`` when fewer than ``min_count`` (default d+1)
    false positives are available.
    """
    X_neg = _as_samples(X_neg)
    if X_neg.shape[1] != model.dim:
        raise ValueError("model and samples differ in dimension")
    if min_count is None:
        min_count = model.dim + 1
    inside = model.contains(X_neg)
    if int(inside.sum()) < max(min_count, 1):
        return fallback
    return estimate_gaussian(X_neg[inside], ridge)
