"""Latent hinge-minimax (LHM) classifiers.

An LHM model is a union of C convex components, each the intersection of K
halfspaces. Training mixes a hinge loss on positives with the worst-case
(minimax) probability that a negative with known mean and covariance falls
inside a component, and alternates per-component training with latent
reassignment of positives. Trained models compile exactly into small
step-activation networks that can then be fine-tuned with cross-entropy.
"""

from lhm.data import Dataset, SynthSpec, gen_synthetic, load_csv, save_csv, subsample_positives
from lhm.khhm import TrainConfig, khhm_hinge_sum, khhm_risk, lhm_hinge_max, train_khhm
from lhm.latent import (
    Assignment,
    LhmModel,
    TrainTrace,
    assign,
    deflate,
    empirical_risk,
    inflate,
    init_assignment,
    load_model,
    predict,
    predict_value,
    save_model,
    train_lhm,
    train_one_vs_all,
)
from lhm.metrics import accuracy, confusion, eer, emit_plot
from lhm.minimax import (
    ComponentModel,
    EmptyIntersectionError,
    Hyperplane,
    MinimaxResult,
    QPConvergenceError,
    closest_point_in_intersection,
    minimax_gradient,
    minimax_probability,
)
from lhm.netmap import FinetuneConfig, NetSpec, finetune, forward, map_binary, map_multiclass
from lhm.stats import GaussianStats, estimate_gaussian, refine_negative_stats

__version__ = "0.1.0"
