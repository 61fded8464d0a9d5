"""Latent hinge-minimax models: a union of C intersections trained by alternating minimization.

Component indices are 0-based throughout the Python API.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from lhm.khhm import TrainConfig, init_component, khhm_risk, lhm_hinge_max, train_khhm
from lhm.minimax import ComponentModel, minimax_probability
from lhm.stats import GaussianStats, estimate_gaussian

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
TIE_RTOL = 1e-12


class LhmModel:
    """Union of C components, each an intersection of K halfspaces."""

    def __init__(self, components, meta: dict | None = None):
        components = list(components)
        if not components:
            raise ValueError("an LHM model needs at least one component")
        if len({c.dim for c in components}) != 1:
            raise ValueError("components differ in dimension")
        if len({c.K for c in components}) != 1:
            raise ValueError("components differ in number of hyperplanes")
        self.components = components
        self.meta = dict(meta or {})

    @property
    def C(self) -> int:
        return len(self.components)

    @property
    def K(self) -> int:
        return self.components[0].K

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def component_values(self, X) -> np.ndarray:
        """min_j margin per component; shape (..., C)."""
        return np.stack([c.value(X) for c in self.components], axis=-1)

    def __eq__(self, other):
        if not isinstance(other, LhmModel):
            return NotImplemented
        return self.C == other.C and all(a == b for a, b in zip(self.components, other.components))

    def __repr__(self):
        return f"LhmModel(C={self.C}, K={self.K}, d={self.dim})"


@dataclass
class Assignment:
    labels: np.ndarray
    C: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.C):
            raise ValueError("assignment references a missing component")

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.labels == i)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.C)


@dataclass
class TrainTrace:
    risks: list[float] = field(default_factory=list)
    reassigned: list[int] = field(default_factory=list)
    final_iteration: int = 0
    stop_reason: str = ""

    def to_csv(self) -> str:
        lines = ["iter,risk,reassigned"]
        lines += [f"{t + 1},{r!r},{n}" for t, (r, n) in enumerate(zip(self.risks, self.reassigned))]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "TrainTrace":
        rows = [ln.split(",") for ln in text.strip().splitlines()]
        if not rows or rows[0] != ["iter", "risk", "reassigned"]:
            raise ValueError("not a trace file")
        risks = [float(r[1]) for r in rows[1:]]
        reassigned = [int(r[2]) for r in rows[1:]]
        return cls(risks, reassigned, len(risks))


def predict_value(model: LhmModel, X):
    """max_i min_j (w_ij.x + b_ij)."""
    v = model.component_values(X).max(axis=-1)
    return float(v) if np.ndim(v) == 0 else v


def predict(model: LhmModel, X):
    """+1 on the union of the components (zero counts as inside), -1 elsewhere."""
    return np.where(np.asarray(predict_value(model, X)) >= 0, 1, -1)


def inflate(model: ComponentModel, x) -> ComponentModel:
    """Translate every violated hyperplane so that it passes through ``x``."""
    x = np.asarray(x, dtype=float)
    proj = x @ model.normals.T
    m = proj + model.biases
    if np.all(m >= 0):
        return model
    b = np.where(m < 0, -proj, model.biases)
    return ComponentModel(model.normals, b)


def deflate(model: ComponentModel, x) -> ComponentModel:
    """Translate the hyperplane nearest to the interior point ``x`` onto it."""
    x = np.asarray(x, dtype=float)
    proj = x @ model.normals.T
    m = proj + model.biases
    if np.any(m < 0):
        raise ValueError("deflate requires interior point")
    dist = m / np.linalg.norm(model.normals, axis=1)
    j = int(np.argmin(dist))
    if m[j] == 0:
        return model
    return model.with_bias(j, -proj[j])


def tie_argmin(values) -> int:
    """Lowest index whose value is within a relative 1e-12 of the minimum."""
    values = np.asarray(values, dtype=float)
    lo = values.min()
    return int(np.flatnonzero(values <= lo + TIE_RTOL * max(1.0, abs(lo)))[0])


def assignment_objective(x, component: ComponentModel, stats: GaussianStats, cfg: TrainConfig) -> float:
    x = np.asarray(x, dtype=float)
    moved = deflate(component, x) if component.contains(x) else inflate(component, x)
    p = minimax_probability(moved, stats).probability
    return p + cfg.lam * lhm_hinge_max(component, x, 1, cfg.alpha)


def assign(x, model: LhmModel, stats: GaussianStats, cfg: TrainConfig) -> int:
    """Best component for a positive sample; lowest index wins ties."""
    if model.C == 1:
        return 0
    return tie_argmin([assignment_objective(x, c, stats, cfg) for c in model.components])


def empirical_risk(model: LhmModel, assignment: Assignment, X_pos, stats: GaussianStats, cfg: TrainConfig) -> float:
    X_pos = np.asarray(X_pos, dtype=float)
    if assignment.labels.shape[0] != X_pos.shape[0]:
        raise ValueError("assignment does not cover the positives")
    total = 0.0
    for i, comp in enumerate(model.components):
        total += minimax_probability(comp, stats).probability
        idx = assignment.members(i)
        if idx.size:
            total += cfg.lam * float(lhm_hinge_max(comp, X_pos[idx], 1, cfg.alpha).sum())
    return total


def init_assignment(X_pos, C: int, seed: int, mode: str = "kmeans") -> Assignment:
    """k-means++ seeded Lloyd clustering (at most 100 iterations) or uniform random labels."""
    X_pos = np.asarray(X_pos, dtype=float)
    if X_pos.shape[0] < C:
        raise ValueError(f"need at least C={C} positives, got {X_pos.shape[0]}")
    if C == 1:
        return Assignment(np.zeros(X_pos.shape[0], dtype=int), 1)
    rng = np.random.default_rng(seed)
    if mode == "random":
        return Assignment(rng.integers(0, C, X_pos.shape[0]), C)
    if mode != "kmeans":
        raise ValueError(f"unknown init mode {mode!r}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, labels = kmeans2(X_pos, C, iter=100, minit="++", seed=rng)
    return Assignment(labels, C)


def _fill_empty_by_distance(labels, X_pos, C):
    # initial assignment has no models yet: steal the points farthest from the largest cluster's centre
    labels = labels.copy()
    quota = math.ceil(len(labels) / C)
    for i in range(C):
        if np.any(labels == i):
            continue
        big = np.bincount(labels, minlength=C).argmax()
        idx = np.flatnonzero(labels == big)
        centre = X_pos[idx].mean(axis=0)
        far = idx[np.argsort(-np.linalg.norm(X_pos[idx] - centre, axis=1), kind="stable")]
        labels[far[:min(quota, len(idx) - 1)]] = i
    return labels


def _reseed_empty(labels, model, X_pos, cfg):
    labels = labels.copy()
    C = model.C
    quota = math.ceil(len(labels) / C)
    for i in range(C):
        if np.any(labels == i):
            continue
        hinge = np.array([lhm_hinge_max(model.components[labels[n]], X_pos[n], 1, cfg.alpha)
                          for n in range(len(labels))])
        counts = np.bincount(labels, minlength=C)
        take = []
        # never strip another component of its last member
        for n in np.argsort(-hinge, kind="stable"):
            if len(take) == quota:
                break
            if counts[labels[n]] > 1:
                counts[labels[n]] -= 1
                take.append(n)
        take = np.array(take, dtype=int)
        log.info("component %d is empty; reseeding with %d worst-fit positives", i, len(take))
        labels[take] = i
    return labels


def _fit_component(args):
    i, X_i, stats, K, cfg, prev, X_neg = args
    seeded = cfg.replace(seed=cfg.seed + i)
    if prev is None:
        model = train_khhm(X_i, stats, K, seeded, X_neg=X_neg)
        return model
    # warm starts: previous iterate, previous iterate inflated over its new members, fresh start
    starts = [prev]
    grown = prev
    for x in X_i:
        if not grown.contains(x):
            grown = inflate(grown, x)
    if grown != prev:
        starts.append(grown)
    starts.append(init_component(X_i, stats, K, seeded))
    best, best_risk = None, np.inf
    for s in starts:
        m = train_khhm(X_i, stats, K, seeded, init=s, X_neg=X_neg)
        r = khhm_risk(m, X_i, stats, seeded)
        if r < best_risk:
            best, best_risk = m, r
    return best


def _model_step(X_pos, labels, stats, K, cfg, prev, X_neg, jobs):
    C = len(prev) if prev is not None else int(labels.max()) + 1
    tasks = [(i, X_pos[labels == i], stats, K, cfg, None if prev is None else prev[i], X_neg)
             for i in range(C)]
    if jobs > 1 and C > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_fit_component, tasks))
    return [_fit_component(t) for t in tasks]


def train_lhm(X_pos, X_neg, C: int, K: int, cfg: TrainConfig, *, stats: GaussianStats | None = None,
              initial: Assignment | None = None, jobs: int = 1):
    """Alternate per-component training and reassignment until the risk stops improving.

    Returns ``(model, assignment, trace)``. ``stats`` may be passed to reuse a
    background estimate shared across classes; otherwise it is estimated from
    ``X_neg`` once. Components are trained independently (``jobs`` threads)
    and merged in index order, so results do not depend on scheduling.

    A reassignment is kept only when the retrained model does not raise the
    empirical risk; the recorded risk sequence is therefore non-increasing.
    """
    X_pos = np.asarray(X_pos, dtype=float)
    if X_pos.ndim != 2 or X_pos.shape[0] < C:
        raise ValueError(f"need at least C={C} positives")
    if stats is None:
        X_neg = np.asarray(X_neg, dtype=float)
        if X_neg.ndim != 2 or X_neg.shape[0] < 2:
            raise ValueError("need at least two negatives")
        stats = estimate_gaussian(X_neg)
    elif X_neg is not None:
        X_neg = np.asarray(X_neg, dtype=float)
    if not cfg.refine_stats:
        X_neg = None
    if C > 1 and np.all(X_pos == X_pos[0]):
        warnings.warn("all positives are identical; training a single component")
        log.warning("all positives identical; degrading to C=1")
        C = 1

    if initial is None:
        initial = init_assignment(X_pos, C, cfg.seed, cfg.init)
    labels = _fill_empty_by_distance(initial.labels, X_pos, C)
    meta = {"lambda": cfg.lam, "alpha": cfg.alpha}

    components = _model_step(X_pos, labels, stats, K, cfg, None, X_neg, jobs)
    model = LhmModel(components, meta)
    risk = empirical_risk(model, Assignment(labels, C), X_pos, stats, cfg)
    trace = TrainTrace([risk], [0], 1)

    for t in range(2, cfg.max_outer + 1):
        proposal = np.array([assign(x, model, stats, cfg) for x in X_pos])
        proposal = _reseed_empty(proposal, model, X_pos, cfg)
        changed = int(np.sum(proposal != labels))
        if changed == 0:
            trace.stop_reason = "assignment stable"
            break
        candidate = LhmModel(_model_step(X_pos, proposal, stats, K, cfg, model.components, X_neg, jobs), meta)
        new_risk = empirical_risk(candidate, Assignment(proposal, C), X_pos, stats, cfg)
        if new_risk > risk:
            log.info("iteration %d: reassignment raised risk %.6g -> %.6g; keeping previous model",
                     t, risk, new_risk)
            trace.stop_reason = "no descent"
            break
        improvement = risk - new_risk
        model, labels, risk = candidate, proposal, new_risk
        trace.risks.append(risk)
        trace.reassigned.append(changed)
        trace.final_iteration = t
        if improvement < cfg.stop_tol:
            trace.stop_reason = "risk plateau"
            break
    else:
        trace.stop_reason = "max iterations"
    return model, Assignment(labels, C), trace


def train_one_vs_all(X, y, C: int, K: int, cfg: TrainConfig, *, classes=None, stats: GaussianStats | None = None,
                     jobs: int = 1) -> list[LhmModel]:
    """One LHM per class with every other class as negatives.

    ``stats`` defaults to one background estimate over all of ``X``, reused
    for every class.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if classes is None:
        classes = sorted(set(y.tolist()))
    if stats is None:
        stats = estimate_gaussian(X)
    models = []
    for k, c in enumerate(classes):
        pos = X[y == c]
        neg = X[y != c]
        model, _, _ = train_lhm(pos, neg, C, K, cfg.replace(seed=cfg.seed + 1000 * k), stats=stats, jobs=jobs)
        models.append(model)
    return models


def model_to_dict(model: LhmModel) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "dim": model.dim,
        "C": model.C,
        "K": model.K,
        "components": [
            {"hyperplanes": [{"normal": [float(v) for v in w], "bias": float(b)}
                             for w, b in zip(c.normals, c.biases)]}
            for c in model.components
        ],
        "config": {"lambda": model.meta.get("lambda"), "alpha": model.meta.get("alpha")},
    }


def model_from_dict(doc: dict) -> LhmModel:
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    comps = []
    for c in doc["components"]:
        planes = c["hyperplanes"]
        comps.append(ComponentModel([h["normal"] for h in planes], [h["bias"] for h in planes]))
    model = LhmModel(comps, doc.get("config") or {})
    if model.dim != doc["dim"] or model.C != doc["C"] or model.K != doc["K"]:
        raise ValueError("model header does not match its components")
    return model


def dumps_model(model: LhmModel) -> str:
    return json.dumps(model_to_dict(model), indent=2) + "\n"


def save_model(model: LhmModel, path):
    with open(path, "w") as f:
        f.write(dumps_model(model))


def load_model(path) -> LhmModel:
    with open(path) as f:
        return model_from_dict(json.load(f))
