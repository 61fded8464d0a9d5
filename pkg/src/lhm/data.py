"""Datasets: synthetic Gaussian mixtures, positive subsampling and CSV I/O.

All randomness goes through ``numpy.random.Generator(PCG64(seed))``, the
64-bit permuted congruential generator (PCG-XSL-RR 128/64), so a seed
fully determines a dataset.

CSV layout: one sample per line, ``d`` feature values followed by an
integer label, comma separated, no header.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    pass


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    names: list[str] | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DataError("dataset needs at least one sample")
        if y.shape != (X.shape[0],):
            raise DataError("one label per sample required")
        if not np.all(np.isfinite(X)):
            raise DataError("invalid data")
        if y.dtype.kind == "f":
            if not np.all(y == np.round(y)):
                raise DataError("labels must be integers")
        y = y.astype(int)
        values = set(np.unique(y).tolist())
        if not (values <= {-1, 1} or min(values) >= 1):
            raise DataError("labels must be in {-1, +1} or 1..C")
        self.features, self.labels = X, y

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def positives(self) -> np.ndarray:
        return self.features[self.labels == 1]

    @property
    def negatives(self) -> np.ndarray:
        return self.features[self.labels == -1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


@dataclass
class ClusterSpec:
    mean: list
    cov: list
    count: int
    label: int = 1


@dataclass
class BoxSpec:
    low: list
    high: list
    count: int


@dataclass
class SynthSpec:
    positive: list[ClusterSpec]
    negative: ClusterSpec | BoxSpec | None = None
    seed: int = 0
    names: list[str] | None = field(default=None)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        pos = [ClusterSpec(c["mean"], c["cov"], int(c["count"]), int(c.get("label", 1)))
               for c in d["positive"]]
        neg = d.get("negative")
        if neg is not None:
            if "box" in neg:
                neg = BoxSpec(neg["box"][0], neg["box"][1], int(neg["count"]))
            else:
                neg = ClusterSpec(neg["mean"], neg["cov"], int(neg["count"]), -1)
        return cls(pos, neg, int(d.get("seed", 0)), d.get("names"))


def _draw_gaussian(rng, mean, cov, count):
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (mean.size, mean.size) or not np.allclose(cov, cov.T):
        raise DataError("invalid covariance")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DataError("invalid covariance") from None
    return mean + rng.standard_normal((count, mean.size)) @ L.T


def gen_synthetic(spec: SynthSpec) -> Dataset:
    """Draw each positive cluster in order, then the negative source."""
    sources = list(spec.positive) + ([spec.negative] if spec.negative is not None else [])
    if not spec.positive:
        raise DataError("at least one positive cluster required")
    if any(s.count < 1 for s in sources):
        raise DataError("counts ≥ 1")
    rng = make_rng(spec.seed)
    blocks, labels = [], []
    for c in spec.positive:
        blocks.append(_draw_gaussian(rng, c.mean, c.cov, c.count))
        labels.append(np.full(c.count, c.label))
    neg = spec.negative
    if isinstance(neg, BoxSpec):
        low, high = np.asarray(neg.low, dtype=float), np.asarray(neg.high, dtype=float)
        if low.shape != high.shape or np.any(high <= low):
            raise DataError("invalid box")
        blocks.append(rng.uniform(low, high, size=(neg.count, low.size)))
        labels.append(np.full(neg.count, -1))
    elif neg is not None:
        blocks.append(_draw_gaussian(rng, neg.mean, neg.cov, neg.count))
        labels.append(np.full(neg.count, -1))
    if len({b.shape[1] for b in blocks}) != 1:
        raise DataError("sources differ in dimension")
    return Dataset(np.vstack(blocks), np.concatenate(labels), spec.names)


def subsample_positives(ds: Dataset, n: int, seed) -> Dataset:
    """Keep ``n`` positives chosen uniformly without replacement and every negative."""
    pos = np.flatnonzero(ds.labels == 1)
    if n < 0 or n > pos.size:
        raise DataError(f"cannot keep {n} of {pos.size} positives")
    keep = make_rng(seed).choice(pos, size=n, replace=False)
    mask = ds.labels != 1
    mask[keep] = True
    return Dataset(ds.features[mask], ds.labels[mask], ds.names)


def save_csv(ds: Dataset, path):
    with open(path, "w", newline="") as f:
        for x, y in zip(ds.features, ds.labels):
            f.write(",".join([repr(float(v)) for v in x] + [str(int(y))]) + "\n")


def load_csv(path) -> Dataset:
    rows, labels = [], []
    width = None
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise DataError(f"line {lineno}: need at least one feature and a label")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"line {lineno}: expected {width} fields, got {len(row)}")
            try:
                values = [float(c) for c in row[:-1]]
                label = float(row[-1])
            except ValueError:
                raise DataError(f"line {lineno}: malformed row") from None
            if not (np.all(np.isfinite(values)) and np.isfinite(label)):
                raise DataError(f"invalid data at line {lineno}")
            if label != int(label):
                raise DataError(f"line {lineno}: label must be an integer")
            rows.append(values)
            labels.append(int(label))
    if not rows:
        raise DataError(f"{path}: no samples")
    return Dataset(np.array(rows), np.array(labels))
