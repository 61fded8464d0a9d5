"""Compile LHM models into feed-forward networks and fine-tune them.

Binary model -> three layers: hyperplane units, AND units (one per
component), two OR outputs. Several one-vs-all models -> hyperplane units,
AND units, and a class layer read through softmax cross-entropy.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from lhm.latent import LhmModel

NET_FORMAT_VERSION = 1
ACTIVATIONS = ("step", "sigmoid", "identity")


@dataclass
class Layer:
    weights: np.ndarray            # (out, in)
    biases: np.ndarray             # (out,)
    activation: str = "identity"
    trainable: bool = True
    beta: float = 1.0              # sigmoid temperature

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float)
        self.biases = np.array(self.biases, dtype=float).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.biases.shape[0]:
            raise ValueError("layer weights/biases shapes disagree")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def apply(self, z):
        if self.activation == "step":
            return (z >= 0).astype(float)
        if self.activation == "sigmoid":
            return 0.5 * (1.0 + np.tanh(0.5 * self.beta * z))
        return z


@dataclass
class NetSpec:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")

    @property
    def output_count(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 10
    learning_rate: float = 0.1
    batch_size: int = 32
    beta: float = 10.0
    seed: int = 0
    freeze_logic_layers: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.beta <= 0 or self.learning_rate < 0:
            raise ValueError("invalid fine-tuning configuration")


def _and_layer(sizes):
    """AND units over consecutive groups of hyperplane units, one group per component."""
    rows = []
    biases = []
    total = sum(sizes)
    start = 0
    for K in sizes:
        row = np.zeros(total)
        row[start:start + K] = 1.0 / K
        rows.append(row)
        biases.append(-1.0 + 1.0 / (2 * K))
        start += K
    return Layer(np.array(rows), np.array(biases), "step", trainable=False)


def _hyperplane_layer(components):
    W = np.vstack([c.normals for c in components])
    b = np.concatenate([c.biases for c in components])
    return Layer(W, b, "step", trainable=True)


def map_binary(model: LhmModel) -> NetSpec:
    """Exact network for one LHM: output 0 wins iff the point lies in some component."""
    H = model.C
    comps = model.components
    or_w = np.vstack([np.full(H, 1.0 / H), np.full(H, -1.0 / H)])
    or_b = np.array([-1.0 / (2 * H), 1.0 / (2 * H)])
    return NetSpec([
        _hyperplane_layer(comps),
        _and_layer([c.K for c in comps]),
        Layer(or_w, or_b, "identity", trainable=False),
    ])


def map_multiclass(models: list[LhmModel], noise_sigma: float = 0.01, seed: int = 0) -> NetSpec:
    """Stack one-vs-all models; the class layer starts at 1 on its own components and N(0, sigma^2) elsewhere."""
    if not models:
        raise ValueError("no models to map")
    if len({m.dim for m in models}) != 1:
        raise ValueError("models differ in dimension")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    comps = [c for m in models for c in m.components]
    owner = np.concatenate([np.full(m.C, k) for k, m in enumerate(models)])
    C = len(models)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=(C, len(comps))) * noise_sigma
    W = np.where(owner[None, :] == np.arange(C)[:, None], 1.0, noise)
    return NetSpec([
        _hyperplane_layer(comps),
        _and_layer([c.K for c in comps]),
        Layer(W, np.zeros(C), "identity", trainable=True),
    ])


def forward_layers(net: NetSpec, X):
    """Pre-activations and activations for every layer (batch rows)."""
    a = np.atleast_2d(np.asarray(X, dtype=float))
    pre, post = [], [a]
    for layer in net.layers:
        z = a @ layer.weights.T + layer.biases
        a = layer.apply(z)
        pre.append(z)
        post.append(a)
    return pre, post


def forward(net: NetSpec, x):
    X = np.asarray(x, dtype=float)
    out = forward_layers(net, X)[1][-1]
    return out[0] if X.ndim == 1 else out


def softmax(Z):
    Z = np.atleast_2d(Z)
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def predict_classes(net: NetSpec, X) -> np.ndarray:
    """1-based class index of the largest output (lowest index on ties)."""
    return np.argmax(np.atleast_2d(forward(net, X)), axis=1) + 1


def smooth(net: NetSpec, beta: float) -> NetSpec:
    """Copy of ``net`` with every step activation replaced by a sigmoid of temperature ``beta``."""
    out = copy.deepcopy(net)
    for layer in out.layers:
        if layer.activation == "step":
            layer.activation = "sigmoid"
            layer.beta = beta
    return out


def _derivative(layer, z, a):
    if layer.activation == "sigmoid":
        return layer.beta * a * (1.0 - a)
    if layer.activation == "identity":
        return np.ones_like(z)
    raise ValueError("step activations have no useful derivative; smooth the net first")


def cross_entropy_and_gradients(net: NetSpec, X, y):
    """Mean softmax cross-entropy over (X, y) with y in 1..C, and (dW, db) per layer."""
    y = np.asarray(y, dtype=int) - 1
    pre, post = forward_layers(net, X)
    n = post[0].shape[0]
    logits = post[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsum - shifted[np.arange(n), y]))
    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(net.layers)
    for l in reversed(range(len(net.layers))):
        layer = net.layers[l]
        dz = delta * _derivative(layer, pre[l], post[l + 1])
        grads[l] = (dz.T @ post[l], dz.sum(axis=0))
        delta = dz @ layer.weights
    return loss, grads


def _run_epoch(net, X, y, order, cfg, lr, frozen):
    total = 0.0
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        loss, grads = cross_entropy_and_gradients(net, X[idx], y[idx])
        total += loss * len(idx)
        for layer, (gW, gb), skip in zip(net.layers, grads, frozen):
            if skip:
                continue
            layer.weights -= lr * gW
            layer.biases -= lr * gb
    return total / len(order)


def finetune(net: NetSpec, X, y, cfg: FinetuneConfig):
    """Mini-batch gradient descent on softmax cross-entropy.

    Step units become sigmoids of temperature ``cfg.beta``; the returned net
    keeps those smooth activations. Returns ``(net, per-epoch mean loss)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("need matching, nonempty samples and labels")
    if y.min() < 1 or y.max() > net.output_count:
        raise ValueError("labels must lie in 1..C")
    work = smooth(net, cfg.beta)
    frozen = [cfg.freeze_logic_layers and not layer.trainable for layer in work.layers]
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.learning_rate
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(X.shape[0])
        snapshot = copy.deepcopy(work)
        # overflow is detected through the loss below
        with np.errstate(over="ignore", invalid="ignore"):
            loss = _run_epoch(work, X, y, order, cfg, lr, frozen)
            if not np.isfinite(loss):
                work, lr = snapshot, lr / 2
                loss = _run_epoch(work, X, y, order, cfg, lr, frozen)
        if not np.isfinite(loss):
            raise FloatingPointError("fine-tuning diverged (non-finite loss)")
        losses.append(loss)
    return work, losses


def net_to_dict(net: NetSpec) -> dict:
    return {
        "version": NET_FORMAT_VERSION,
        "output_count": net.output_count,
        "layers": [
            {
                "rows": int(layer.weights.shape[0]),
                "cols": int(layer.weights.shape[1]),
                "weights": [float(v) for v in layer.weights.ravel()],
                "biases": [float(v) for v in layer.biases],
                "activation": layer.activation,
                "beta": float(layer.beta),
                "trainable": bool(layer.trainable),
            }
            for layer in net.layers
        ],
    }


def net_from_dict(doc: dict) -> NetSpec:
    if doc.get("version") != NET_FORMAT_VERSION:
        raise ValueError(f"unsupported net version {doc.get('version')!r}")
    layers = []
    for spec in doc["layers"]:
        W = np.array(spec["weights"], dtype=float)
        if W.size != spec["rows"] * spec["cols"]:
            raise ValueError("layer weight count does not match rows*cols")
        layers.append(Layer(W.reshape(spec["rows"], spec["cols"]), spec["biases"], spec["activation"],
                            bool(spec["trainable"]), float(spec.get("beta", 1.0))))
    return NetSpec(layers)


def dumps_net(net: NetSpec) -> str:
    return json.dumps(net_to_dict(net), indent=2) + "\n"


def save_net(net: NetSpec, path):
    with open(path, "w") as f:
        f.write(dumps_net(net))


def load_net(path) -> NetSpec:
    with open(path) as f:
        return net_from_dict(json.load(f))
