"""Small synthetic experiments: 2-D structure discovery, imbalance, and a multi-class pipeline."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from lhm.data import ClusterSpec, SynthSpec, gen_synthetic
from lhm.khhm import TrainConfig, train_khhm
from lhm.latent import LhmModel, init_assignment, predict_value, train_lhm, train_one_vs_all
from lhm.metrics import accuracy, eer
from lhm.netmap import FinetuneConfig, finetune, map_multiclass, predict_classes
from lhm.stats import estimate_gaussian


def _blob(mean, std, count, label=1):
    return ClusterSpec(list(mean), (std ** 2 * np.eye(len(mean))).tolist(), count, label)


# two-cluster structure discovery

FIG3_CENTERS = ((-3.0, 3.0), (3.0, 3.0))
FIG3_CONFIG = TrainConfig(lam=0.01)


def purity(labels, truth) -> float:
    """Fraction of samples in the majority true cluster of their component."""
    labels, truth = np.asarray(labels), np.asarray(truth)
    hit = 0
    for c in np.unique(labels):
        hit += np.bincount(truth[labels == c]).max()
    return hit / labels.size


@dataclass
class StructureRun:
    purity: float
    iterations: int
    stop_reason: str
    risks: list


def structure_run(seed: int, centers=FIG3_CENTERS, per_cluster: int = 50, n_neg: int = 2000,
                  std: float = 0.3, cfg: TrainConfig = FIG3_CONFIG, C: int = 2, K: int = 2) -> StructureRun:
    """Two blobs of positives over a standard-normal background, trained from a random assignment."""
    spec = SynthSpec([_blob(c, std, per_cluster) for c in centers], _blob((0.0, 0.0), 1.0, n_neg, -1), seed)
    ds = gen_synthetic(spec)
    X_pos = ds.positives
    truth = np.repeat(np.arange(len(centers)), per_cluster)
    cfg = cfg.replace(seed=seed)
    start = init_assignment(X_pos, C, seed, "random")
    _, assignment, trace = train_lhm(X_pos, ds.negatives, C, K, cfg, initial=start)
    return StructureRun(purity(assignment.labels, truth), trace.final_iteration, trace.stop_reason,
                        list(trace.risks))


# imbalanced two-cluster problem: LHM against a single hyperplane

IMBALANCE_CENTERS = ((-4.0, 0.0), (4.0, 0.0))


def imbalance_data(seed: int, n_pos: int = 20, ratio: int = 100, test_pos: int = 500, test_neg: int = 5000,
                   std: float = 0.5):
    half = n_pos // 2
    train = gen_synthetic(SynthSpec([_blob(c, std, n) for c, n in zip(IMBALANCE_CENTERS, (half, n_pos - half))],
                                    _blob((0.0, 0.0), 1.0, n_pos * ratio, -1), seed))
    test = gen_synthetic(SynthSpec([_blob(c, std, test_pos // 2) for c in IMBALANCE_CENTERS],
                                   _blob((0.0, 0.0), 1.0, test_neg, -1), seed + 10_000))
    return train, test


def imbalance_run(seed: int, cfg: TrainConfig | None = None, C: int = 2, K: int = 2):
    """(1-EER of LHM, 1-EER of one linear hyperplane) on held-out data."""
    cfg = (cfg or TrainConfig()).replace(seed=seed)
    train, test = imbalance_data(seed)
    lhm, _, _ = train_lhm(train.positives, train.negatives, C, K, cfg)
    stats = estimate_gaussian(train.negatives)
    linear = LhmModel([train_khhm(train.positives, stats, 1, cfg)])
    score = lambda m: 1.0 - eer(predict_value(m, test.features), test.labels)
    return score(lhm), score(linear)


# three classes, two clusters each, through the network mapping

MULTICLASS_ANGLES = ((0.0, 180.0), (60.0, 240.0), (120.0, 300.0))


def multiclass_data(seed: int, per_cluster: int = 40, radius: float = 5.0, std: float = 0.5, test_per_cluster: int = 200):
    def build(count, s):
        blobs = [_blob((radius * np.cos(np.radians(a)), radius * np.sin(np.radians(a))), std, count, k + 1)
                 for k, pair in enumerate(MULTICLASS_ANGLES) for a in pair]
        return gen_synthetic(SynthSpec(blobs, None, s))
    return build(per_cluster, seed), build(test_per_cluster, seed + 10_000)


def multiclass_run(seed: int, cfg: TrainConfig | None = None, ft: FinetuneConfig | None = None,
                   C: int = 2, K: int = 3):
    """Test accuracy after fine-tuning, and of the noise-free mapped net before any update."""
    cfg = (cfg or TrainConfig()).replace(seed=seed)
    ft = replace(ft or FinetuneConfig(epochs=10), seed=seed)
    train, test = multiclass_data(seed)
    models = train_one_vs_all(train.features, train.labels, C, K, cfg)
    tuned, _ = finetune(map_multiclass(models, 0.01, seed), train.features, train.labels, ft)
    untouched, _ = finetune(map_multiclass(models, 0.0, seed), train.features, train.labels,
                            replace(ft, learning_rate=0.0))
    acc = lambda net: accuracy(predict_classes(net, test.features), test.labels)
    return acc(tuned), acc(untouched)
