"""Oracle-backed verification suites, shared by ``lhm verify`` and the test-suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lhm import oracle
from lhm.data import ClusterSpec, SynthSpec, gen_synthetic
from lhm.khhm import TrainConfig
from lhm.latent import assign, predict_value, train_lhm
from lhm.minimax import (
    closed_form_d_squared,
    minimax_gradient,
    minimax_probability,
)
from lhm.netmap import Layer, NetSpec, cross_entropy_and_gradients, forward, map_binary
from lhm.stats import GaussianStats


@dataclass
class SuiteResult:
    name: str
    checked: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and not self.failures

    def fail(self, msg):
        self.failures.append(msg)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        head = f"{status} {self.name}: {self.checked} checked, {len(self.failures)} failed"
        return "\n".join([head] + [f"  {m}" for m in self.failures[:10]])


def minimax_models(seed: int, count: int = 200):
    """Seeded random 2-D problems: (model, stats) with K in {1, 2, 3}."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        K = int(rng.integers(1, 4))
        stats = oracle.random_stats(rng, 2)
        model = oracle.random_component(rng, 2, K, anchor=rng.normal(0.0, 2.0, 2))
        out.append((model, stats))
    return out


def zero_bias_models(seed: int, count: int = 200):
    rng = np.random.default_rng(seed + 7919)
    return [(oracle.random_component(rng, 2, int(rng.integers(1, 4)), zero_bias=True),
             oracle.random_stats(rng, 2)) for _ in range(count)]


def check_minimax(seed: int = 0, count: int = 200, mc_samples: int = 100_000) -> SuiteResult:
    res = SuiteResult("minimax")
    for k, (model, stats) in enumerate(minimax_models(seed, count)):
        r = minimax_probability(model, stats)
        g = oracle.grid_d_squared(model, stats)
        res.checked += 1
        if abs(r.d_squared - g) > 1e-3:
            res.fail(f"model {k}: QP d2 {r.d_squared:.8g} vs grid {g:.8g}")
        mass = oracle.mc_gaussian_mass(model, stats, mc_samples, seed + k)
        if mass > r.probability + oracle.mc_tolerance(r.probability, mc_samples):
            res.fail(f"model {k}: Gaussian mass {mass:.5f} exceeds bound {r.probability:.5f}")
    for k, (model, stats) in enumerate(zero_bias_models(seed, count)):
        r = minimax_probability(model, stats)
        res.checked += 1
        if r.active_set:
            cf = closed_form_d_squared(model, stats, r.active_set)
            if abs(cf - r.d_squared) > 1e-8:
                res.fail(f"zero-bias model {k}: closed form {cf!r} vs QP {r.d_squared!r}")
    quad = minimax_probability(oracle.ComponentModel([[-1, 0], [0, -1]], [0, 0]),
                               GaussianStats([1, 1], np.eye(2)))
    res.checked += 1
    if quad.probability != 1 / 3:
        res.fail(f"quadrant probability {quad.probability!r} != 1/3")
    return res


def assign_cases(seed: int, count: int = 1000):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        d = int(rng.integers(2, 4))
        C = int(rng.integers(1, 4))
        K = int(rng.integers(1, 4))
        model = oracle.random_lhm(rng, d, C, K)
        stats = oracle.random_stats(rng, d)
        cfg = TrainConfig(lam=float(rng.choice([0.0, 0.01, 0.1, 1.0])), alpha=float(rng.uniform(0.2, 2.0)))
        x = rng.normal(0.0, 3.0, d)
        yield x, model, stats, cfg


def check_assign(seed: int = 0, count: int = 1000) -> SuiteResult:
    res = SuiteResult("assign")
    for k, (x, model, stats, cfg) in enumerate(assign_cases(seed, count)):
        res.checked += 1
        a, b = assign(x, model, stats, cfg), oracle.brute_force_assign(x, model, stats, cfg)
        if a != b:
            res.fail(f"case {k}: assign={a} oracle={b}")
    return res


def mapping_agreement(model, rng, points: int = 10_000, margin: float = 1e-6):
    """(agreeing, tested) over random points at least ``margin`` from every hyperplane."""
    X = rng.uniform(-8.0, 8.0, (points, model.dim))
    allm = np.concatenate([c.margins(X) for c in model.components], axis=1)
    X = X[np.abs(allm).min(axis=1) > margin]
    net = map_binary(model)
    out = forward(net, X)
    net_positive = np.argmax(out, axis=1) == 0
    lhm_positive = predict_value(model, X) >= 0
    return int(np.sum(net_positive == lhm_positive)), X.shape[0]


def check_mapping(seed: int = 0, count: int = 20, points: int = 10_000) -> SuiteResult:
    res = SuiteResult("mapping")
    rng = np.random.default_rng(seed)
    for k in range(count):
        model = oracle.random_lhm(rng, int(rng.integers(2, 5)), int(rng.integers(1, 6)), int(rng.integers(1, 5)))
        agree, tested = mapping_agreement(model, rng, points)
        res.checked += 1
        if agree != tested:
            res.fail(f"model {k}: {tested - agree} of {tested} points disagree")
    return res


def cluster_problem(rng, n_clusters: int, per_cluster: int = 25, n_neg: int = 500):
    """Positives in ``n_clusters`` blobs on a ring around a standard-normal background."""
    angles = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(n_clusters) / n_clusters
    radius = rng.uniform(3.0, 5.0)
    spec = SynthSpec(
        [ClusterSpec([radius * np.cos(a), radius * np.sin(a)], (0.3 ** 2 * np.eye(2)).tolist(), per_cluster)
         for a in angles],
        ClusterSpec([0.0, 0.0], np.eye(2).tolist(), n_neg, -1),
        seed=int(rng.integers(2 ** 31)),
    )
    ds = gen_synthetic(spec)
    return ds.positives, ds.negatives


def monotone_runs(seed: int = 0, count: int = 100):
    rng = np.random.default_rng(seed)
    for k in range(count):
        n_clusters = int(rng.integers(2, 5))
        X_pos, X_neg = cluster_problem(rng, n_clusters)
        C = int(rng.integers(2, 5))
        cfg = TrainConfig(seed=seed + k, lam=float(rng.choice([0.01, 0.1, 1.0])),
                          init=str(rng.choice(["kmeans", "random"])), max_iters=200)
        _, _, trace = train_lhm(X_pos, X_neg, C, 2, cfg)
        yield trace


def check_monotone(seed: int = 0, count: int = 100) -> SuiteResult:
    res = SuiteResult("monotone")
    for k, trace in enumerate(monotone_runs(seed, count)):
        res.checked += 1
        steps = np.diff(trace.risks)
        if np.any(steps > 1e-9):
            res.fail(f"run {k}: risk rose by {steps.max():.3g}")
    return res


def gradient_instances(seed: int = 0, count: int = 50):
    """Random models whose closest point has a well-separated, non-degenerate active set."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        d = int(rng.integers(2, 4))
        stats = oracle.random_stats(rng, d)
        model = oracle.random_component(rng, d, int(rng.integers(1, 4)))
        r = minimax_probability(model, stats)
        if not r.active_set:
            continue
        g = minimax_gradient(model, stats, r)
        if g.degenerate:
            continue
        # keep away from active-set switches: inactive constraints clearly slack, multipliers clearly positive
        m = model.margins(r.closest_point) / np.linalg.norm(model.normals, axis=1)
        inactive = [j for j in range(model.K) if j not in r.active_set]
        if inactive and m[inactive].min() < 1e-2:
            continue
        if np.abs(g.biases[list(r.active_set)]).min() < 1e-4:
            continue
        out.append((model, stats))
    return out


def relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def minimax_fd(model, stats, step=1e-5):
    """Finite-difference gradient of the probability with respect to (normals, biases)."""
    theta = np.hstack([model.normals, model.biases[:, None]])

    def prob(t):
        return minimax_probability(oracle.ComponentModel(t[:, :-1], t[:, -1]), stats).probability

    return oracle.finite_diff(prob, theta, step)


def random_toy_net(rng, d=3, hidden=(5, 4), classes=3, beta=2.0):
    sizes = [d, *hidden, classes]
    layers = []
    for k in range(len(sizes) - 1):
        act = "identity" if k == len(sizes) - 2 else "sigmoid"
        layers.append(Layer(rng.normal(0, 0.8, (sizes[k + 1], sizes[k])), rng.normal(0, 0.5, sizes[k + 1]),
                            act, True, beta))
    return NetSpec(layers)


def net_fd(net, X, y, step=1e-5):
    grads = []
    for layer in net.layers:
        def loss_w(W, layer=layer):
            saved = layer.weights
            layer.weights = W
            val = cross_entropy_and_gradients(net, X, y)[0]
            layer.weights = saved
            return val

        def loss_b(b, layer=layer):
            saved = layer.biases
            layer.biases = b
            val = cross_entropy_and_gradients(net, X, y)[0]
            layer.biases = saved
            return val

        grads.append((oracle.finite_diff(loss_w, layer.weights, step), oracle.finite_diff(loss_b, layer.biases, step)))
    return grads


def check_gradients(seed: int = 0, count: int = 50, rtol: float = 1e-4) -> SuiteResult:
    res = SuiteResult("gradients")
    for k, (model, stats) in enumerate(gradient_instances(seed, count)):
        g = minimax_gradient(model, stats)
        fd = minimax_fd(model, stats)
        analytic = np.hstack([g.normals, g.biases[:, None]])
        res.checked += 1
        err = relative_error(analytic, fd)
        if err > rtol:
            res.fail(f"minimax instance {k}: relative error {err:.2e}")
    rng = np.random.default_rng(seed + 1)
    for k in range(count):
        net = random_toy_net(rng)
        X = rng.normal(size=(8, 3))
        y = rng.integers(1, 4, 8)
        _, grads = cross_entropy_and_gradients(net, X, y)
        fd = net_fd(net, X, y)
        res.checked += 1
        a = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
        b = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in fd])
        err = relative_error(a, b)
        if err > rtol:
            res.fail(f"network {k}: relative error {err:.2e}")
    return res


SUITES = {
    "minimax": check_minimax,
    "assign": check_assign,
    "mapping": check_mapping,
    "monotone": check_monotone,
    "gradients": check_gradients,
}
