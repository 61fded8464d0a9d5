"""Single-component training: K hyperplanes, hinge on positives, minimax on negatives."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from lhm.minimax import (
    ComponentModel,
    EmptyIntersectionError,
    QPConvergenceError,
    minimax_gradient,
    minimax_probability,
)
from lhm.stats import GaussianStats, refine_negative_stats

log = logging.getLogger(__name__)

INIT_PERTURBATION = 0.1
MAX_HALVINGS = 40


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0            # hinge weight; "lambda" in config files
    alpha: float = 1.0          # hinge margin
    learning_rate: float = 0.1
    max_iters: int = 500
    seed: int = 0
    refine_stats: bool = False
    stop_tol: float = 1e-6
    unit_norm: bool = False
    max_outer: int = 50
    init: str = "kmeans"

    def __post_init__(self):
        for name in ("alpha", "learning_rate", "stop_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if self.max_iters < 1 or self.max_outer < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.init not in ("kmeans", "random"):
            raise ValueError(f"unknown init mode {self.init!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


def khhm_hinge_sum(model: ComponentModel, x, y: int) -> float:
    """Sum over hyperplanes of max(0, 1 - y (w_j.x + b_j))."""
    m = model.margins(x)
    return float(np.maximum(0.0, 1.0 - y * m).sum(axis=-1))


def lhm_hinge_max(model: ComponentModel, x, y: int, alpha: float):
    """max_j max(0, alpha - y (w_j.x + b_j)); vectorized over a batch of rows."""
    m = model.margins(x)
    h = np.maximum(0.0, (alpha - y * m).max(axis=-1))
    return float(h) if np.ndim(h) == 0 else h


def khhm_risk(model: ComponentModel, X_pos, stats: GaussianStats, cfg: TrainConfig) -> float:
    X_pos = np.asarray(X_pos, dtype=float)
    if X_pos.ndim != 2 or X_pos.shape[0] == 0:
        raise ValueError("no positive samples")
    p = minimax_probability(model, stats).probability
    return p + cfg.lam * float(lhm_hinge_max(model, X_pos, 1, cfg.alpha).sum())


def risk_and_gradient(model: ComponentModel, X_pos, stats: GaussianStats, cfg: TrainConfig):
    """Risk and one subgradient with respect to (normals, biases).

    The hinge subgradient charges each violating sample to its worst
    hyperplane (lowest index on ties).
    """
    res = minimax_probability(model, stats)
    g = minimax_gradient(model, stats, res)
    M = X_pos @ model.normals.T + model.biases
    viol = cfg.alpha - M
    worst = viol.argmax(axis=1)
    h = np.maximum(0.0, viol[np.arange(len(X_pos)), worst])
    risk = res.probability + cfg.lam * float(h.sum())
    gW = g.normals.copy()
    gb = g.biases.copy()
    hit = h > 0
    if np.any(hit):
        K = model.K
        gW -= cfg.lam * np.stack([X_pos[hit & (worst == j)].sum(axis=0) for j in range(K)])
        gb -= cfg.lam * np.bincount(worst[hit], minlength=K).astype(float)
    return risk, gW, gb


def _normalize(W, b):
    n = np.linalg.norm(W, axis=1)
    return W / n[:, None], b / n


def _init_hyperplane(X_pos, stats, cfg, rng):
    direction = np.linalg.solve(stats.covariance, X_pos.mean(axis=0) - stats.mean)
    scale = np.linalg.norm(direction)
    if not scale > 1e-12:
        direction = rng.standard_normal(stats.dim)
        scale = np.linalg.norm(direction)
    w = direction + INIT_PERTURBATION * scale * rng.standard_normal(stats.dim)
    if cfg.unit_norm:
        w = w / np.linalg.norm(w)
    # every positive starts at margin alpha
    b = cfg.alpha - float((X_pos @ w).min())
    return w, b


def _lift_biases(model, X_pos, alpha):
    # absorb rounding so every positive really sits at margin >= alpha
    b = model.biases.copy()
    for _ in range(8):
        low = model.margins(X_pos).min(axis=0)
        short = low < alpha
        if not np.any(short):
            break
        b[short] = np.nextafter(b[short] + (alpha - low[short]), np.inf)
        model = ComponentModel(model.normals, b)
    return model


def init_component(X_pos, stats: GaussianStats, K: int, cfg: TrainConfig, seed=None) -> ComponentModel:
    """Whitened mean-difference direction plus seeded 10% noise, biased so all positives are inside."""
    X_pos = np.asarray(X_pos, dtype=float)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    planes = [_init_hyperplane(X_pos, stats, cfg, rng) for _ in range(K)]
    return _lift_biases(ComponentModel([w for w, _ in planes], [b for _, b in planes]), X_pos, cfg.alpha)


def _make_feasible(model, X_pos, stats, cfg, rng):
    for j in reversed(range(model.K)):
        try:
            minimax_probability(model, stats)
            return model
        except EmptyIntersectionError:
            log.info("empty intersection; reinitializing hyperplane %d", j)
            w, b = _init_hyperplane(X_pos, stats, cfg, rng)
            W = model.normals.copy()
            W[j] = w
            model = ComponentModel(W, model.biases).with_bias(j, b)
    minimax_probability(model, stats)
    return model


def descend(model: ComponentModel, X_pos, stats: GaussianStats, cfg: TrainConfig, X_neg=None):
    """Backtracking subgradient descent; returns (model, final risk, risk history).

    A step is taken only if it does not increase the risk, so the history is
    non-increasing. With ``cfg.refine_stats`` and negatives available the
    moments are re-estimated from the false positives before each step and
    the history is measured under the moments in force at that step.
    """
    base_stats = stats
    risk, gW, gb = risk_and_gradient(model, X_pos, stats, cfg)
    history = [risk]
    step = cfg.learning_rate
    for _ in range(cfg.max_iters):
        if cfg.refine_stats and X_neg is not None:
            stats = refine_negative_stats(model, X_neg, base_stats)
            risk, gW, gb = risk_and_gradient(model, X_pos, stats, cfg)
        step = min(cfg.learning_rate, 4.0 * step)
        accepted = None
        for _ in range(MAX_HALVINGS):
            W = model.normals - step * gW
            b = model.biases - step * gb
            if cfg.unit_norm:
                W, b = _normalize(W, b)
            try:
                trial = ComponentModel(W, b)
                out = risk_and_gradient(trial, X_pos, stats, cfg)
            except (ValueError, QPConvergenceError):
                out = None
            if out is not None and out[0] <= risk:
                accepted = trial, out
                break
            step *= 0.5
        if accepted is None:
            break
        trial, (new_risk, gW, gb) = accepted
        improvement = risk - new_risk
        model, risk = trial, new_risk
        history.append(risk)
        if improvement < cfg.stop_tol:
            break
    return model, risk, history


def train_khhm(X_pos, stats: GaussianStats, K: int, cfg: TrainConfig, init: ComponentModel | None = None,
               X_neg=None) -> ComponentModel:
    """Fit one intersection of K halfspaces to ``X_pos`` against the background ``stats``.

    Deterministic in ``cfg.seed``; the returned model's risk never exceeds
    the risk of the starting model (``init`` or the seeded initialization).
    """
    X_pos = np.asarray(X_pos, dtype=float)
    if X_pos.ndim != 2 or X_pos.shape[0] < 1:
        raise ValueError("no positive samples")
    if K < 1:
        raise ValueError("K must be >= 1")
    if X_pos.shape[1] != stats.dim:
        raise ValueError("samples and stats differ in dimension")
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        model = init_component(X_pos, stats, K, cfg)
    else:
        if init.dim != stats.dim:
            raise ValueError("warm start has the wrong dimension")
        model = init
        if cfg.unit_norm:
            model = ComponentModel(*_normalize(model.normals, model.biases))
    model = _make_feasible(model, X_pos, stats, cfg, rng)
    model, _, _ = descend(model, X_pos, stats, cfg, X_neg)
    return model
