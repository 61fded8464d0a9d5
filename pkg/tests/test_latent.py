import json

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from lhm import oracle
from lhm.experiments import purity
from lhm.khhm import TrainConfig, khhm_risk, train_khhm
from lhm.latent import (
    Assignment,
    LhmModel,
    TrainTrace,
    assign,
    assignment_objective,
    deflate,
    dumps_model,
    empirical_risk,
    inflate,
    init_assignment,
    load_model,
    model_from_dict,
    predict,
    predict_value,
    save_model,
    train_lhm,
    train_one_vs_all,
)
from lhm.minimax import ComponentModel, minimax_probability
from lhm.stats import GaussianStats, estimate_gaussian

seeds = st.integers(0, 2 ** 32 - 1)
POS_QUADRANT = ComponentModel([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
NEG_QUADRANT = ComponentModel([[-1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])
I2 = GaussianStats([0.0, 0.0], np.eye(2))


# prediction

def test_predict_value_single_plane():
    m = LhmModel([ComponentModel([[1.0, 0.0]], [0.0])])
    assert predict_value(m, [2.0, 0.0]) == 2.0
    assert predict(m, [2.0, 0.0]) == 1


def test_predict_value_two_quadrants():
    m = LhmModel([POS_QUADRANT, NEG_QUADRANT])
    assert predict_value(m, [-1.0, -2.0]) == 1.0
    assert predict(m, [-1.0, -2.0]) == 1
    assert predict_value(m, [-1.0, 2.0]) == -1.0
    assert predict(m, [-1.0, 2.0]) == -1


def test_zero_counts_as_positive():
    m = LhmModel([POS_QUADRANT])
    assert predict(m, [0.0, 3.0]) == 1


@given(seeds)
def test_label_is_union_membership(seed):
    rng = np.random.default_rng(seed)
    m = oracle.random_lhm(rng, 2, 3, 2)
    X = rng.normal(0, 4, (50, 2))
    inside = np.any(np.stack([c.contains(X) for c in m.components]), axis=0)
    np.testing.assert_array_equal(predict(m, X) == 1, inside)


# inflate / deflate

def test_inflate_noop_inside():
    assert inflate(POS_QUADRANT, [1.0, 1.0]) is POS_QUADRANT


def test_inflate_single_plane():
    m = inflate(ComponentModel([[1.0, 0.0]], [-1.0]), [0.5, 0.0])
    assert m.biases[0] == -0.5
    assert m.margins([0.5, 0.0])[0] == 0.0


def test_inflate_two_violated_planes_grows_region():
    x = np.array([-1.0, -2.0])
    m = inflate(POS_QUADRANT.with_bias(0, -1.0).with_bias(1, -1.0), x)
    np.testing.assert_array_equal(m.margins(x), [0.0, 0.0])
    old = POS_QUADRANT.with_bias(0, -1.0).with_bias(1, -1.0)
    pts = np.random.default_rng(0).uniform(-1, 6, (2000, 2))
    inside_old = pts[old.contains(pts)]
    assert inside_old.size and np.all(m.contains(inside_old))


@given(seeds)
def test_inflate_contains_point(seed):
    rng = np.random.default_rng(seed)
    c = oracle.random_component(rng, 3, 3)
    x = rng.normal(0, 5, 3)
    assert inflate(c, x).contains(x)


def test_deflate_single_plane():
    m = deflate(ComponentModel([[1.0, 0.0]], [-1.0]), [2.0, 0.0])
    assert m.biases[0] == -2.0


def test_deflate_moves_nearest_plane():
    # normalized distances 1 and 3: the x1 >= 0 plane moves to x1 >= 1
    m = deflate(POS_QUADRANT, [1.0, 3.0])
    np.testing.assert_array_equal(m.biases, [-1.0, 0.0])


def test_deflate_on_boundary_is_noop():
    assert deflate(POS_QUADRANT, [0.0, 2.0]) is POS_QUADRANT


def test_deflate_requires_interior():
    with pytest.raises(ValueError, match="deflate requires interior point"):
        deflate(POS_QUADRANT, [-1.0, 1.0])


@given(seeds)
def test_deflate_shrinks(seed):
    rng = np.random.default_rng(seed)
    anchor = rng.normal(0, 2, 2)
    c = oracle.random_component(rng, 2, 3, anchor=anchor)
    d = deflate(c, anchor)
    pts = rng.uniform(-10, 10, (2000, 2))
    assert np.all(c.contains(pts[d.contains(pts)]))
    assert np.min(np.abs(d.margins(anchor))) == 0.0


def test_deflate_uses_normalized_distance():
    # raw margins 2 (plane 0, |w|=10) vs 1 (plane 1, |w|=1): normalized 0.2 < 1
    c = ComponentModel([[10.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    d = deflate(c, [0.2, 1.0])
    assert d.biases[0] == -2.0 and d.biases[1] == 0.0


# assignment

def test_assign_single_component():
    m = LhmModel([POS_QUADRANT])
    assert assign([5.0, -3.0], m, I2, TrainConfig()) == 0


def test_assign_deep_inside_second_component():
    left = ComponentModel([[-1.0, 0.0], [0.0, 1.0]], [-4.0, 2.0])      # x1 <= -4, x2 >= -2
    right = ComponentModel([[1.0, 0.0], [0.0, 1.0]], [-4.0, 2.0])      # x1 >= 4,  x2 >= -2
    m = LhmModel([left, right])
    x = np.array([7.0, 1.0])
    cfg = TrainConfig()
    # objective by hand: left inflated through x (hinge 1 + 11 = 12), right deflated (hinge 0)
    left_obj = minimax_probability(inflate(left, x), I2).probability + 12.0
    right_obj = minimax_probability(deflate(right, x), I2).probability
    assert assignment_objective(x, left, I2, cfg) == pytest.approx(left_obj, abs=1e-14)
    assert assignment_objective(x, right, I2, cfg) == pytest.approx(right_obj, abs=1e-14)
    assert right_obj < left_obj
    assert assign(x, m, I2, cfg) == 1


def test_assign_tie_goes_to_lowest_index():
    left = ComponentModel([[-1.0, 0.0]], [-3.0])
    right = ComponentModel([[1.0, 0.0]], [-3.0])
    x = np.array([0.0, 0.0])
    assert assign(x, LhmModel([left, right]), I2, TrainConfig()) == 0
    assert assign(x, LhmModel([right, left]), I2, TrainConfig()) == 0


@given(seeds)
def test_assign_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 4))
    m = oracle.random_lhm(rng, d, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    s = oracle.random_stats(rng, d)
    cfg = TrainConfig(lam=float(rng.choice([0.0, 0.1, 1.0])), alpha=float(rng.uniform(0.2, 2)))
    x = rng.normal(0, 3, d)
    assert assign(x, m, s, cfg) == oracle.brute_force_assign(x, m, s, cfg)


@given(seeds, st.floats(0.1, 10.0))
def test_assign_rescaling_with_matched_margin(seed, c):
    # scaling every (w, b) by c, alpha by c and lambda by 1/c leaves every objective unchanged
    rng = np.random.default_rng(seed)
    m = oracle.random_lhm(rng, 2, 3, 2)
    s = oracle.random_stats(rng, 2)
    cfg = TrainConfig(lam=0.5, alpha=0.8)
    x = rng.normal(0, 3, 2)
    objs = sorted(assignment_objective(x, comp, s, cfg) for comp in m.components)
    assume(objs[1] - objs[0] > 1e-6)
    scaled = LhmModel([ComponentModel(comp.normals * c, comp.biases * c) for comp in m.components])
    cfg2 = TrainConfig(lam=0.5 / c, alpha=0.8 * c)
    assert assign(x, scaled, s, cfg2) == assign(x, m, s, cfg)


# empirical risk

def test_empirical_risk_single_component_is_khhm_risk():
    X = np.array([[-3.0, -3.0], [-0.5, -2.0]])
    s = GaussianStats([1.0, 1.0], np.eye(2))
    cfg = TrainConfig(lam=0.3)
    r = empirical_risk(LhmModel([NEG_QUADRANT]), Assignment([0, 0], 1), X, s, cfg)
    assert r == khhm_risk(NEG_QUADRANT, X, s, cfg)


def test_empirical_risk_additive():
    # two single-plane components, each at Mahalanobis distance 3 from the mean: probability 0.1 each
    a = ComponentModel([[1.0, 0.0]], [-3.0])
    b = ComponentModel([[-1.0, 0.0]], [-3.0])
    X = np.array([[5.0, 0.0], [-5.0, 0.0]])
    r = empirical_risk(LhmModel([a, b]), Assignment([0, 1], 2), X, I2, TrainConfig())
    assert r == pytest.approx(0.2, abs=1e-15)


def test_empirical_risk_lambda_zero_and_empty_component():
    a = ComponentModel([[1.0, 0.0]], [-3.0])
    b = ComponentModel([[-1.0, 0.0]], [-1.0])
    X = np.array([[0.0, 0.0]])
    r = empirical_risk(LhmModel([a, b]), Assignment([0], 2), X, I2, TrainConfig(lam=0.0))
    assert r == pytest.approx(0.1 + 0.5, abs=1e-15)


# initial assignment

def test_kmeans_recovers_separated_blobs():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal([-10, 0], 0.5, (30, 2)), rng.normal([10, 0], 0.5, (30, 2))])
    a = init_assignment(X, 2, seed=3)
    assert purity(a.labels, np.repeat([0, 1], 30)) == 1.0


def test_init_assignment_contracts():
    X = np.random.default_rng(1).normal(size=(10, 2))
    assert np.all(init_assignment(X, 1, 0).labels == 0)
    np.testing.assert_array_equal(init_assignment(X, 3, 5).labels, init_assignment(X, 3, 5).labels)
    r = init_assignment(X, 3, 5, "random")
    assert set(r.labels.tolist()) <= {0, 1, 2}
    with pytest.raises(ValueError):
        init_assignment(X, 11, 0)
    with pytest.raises(ValueError):
        init_assignment(X, 2, 0, "bogus")


# training loop

def blobs(seed, centers, n=30, std=0.4, n_neg=400):
    rng = np.random.default_rng(seed)
    X_pos = np.vstack([rng.normal(c, std, (n, 2)) for c in centers])
    return X_pos, rng.standard_normal((n_neg, 2))


def test_single_component_reduces_to_khhm():
    X_pos, X_neg = blobs(0, [[3, 3]])
    cfg = TrainConfig(seed=4)
    model, a, trace = train_lhm(X_pos, X_neg, 1, 2, cfg)
    direct = train_khhm(X_pos, estimate_gaussian(X_neg), 2, cfg)
    assert model.components[0] == direct
    assert np.all(a.labels == 0)


def test_convex_cluster_with_two_components():
    X_pos, X_neg = blobs(1, [[3, -2]])
    cfg = TrainConfig(seed=1)
    model, a, trace = train_lhm(X_pos, X_neg, 2, 2, cfg)
    assert np.all(np.diff(trace.risks) <= 1e-9)
    assert np.all(predict(model, X_pos) == 1)


def test_two_clusters_from_random_start():
    X_pos, X_neg = blobs(2, [[-3, 3], [3, 3]], n=50, std=0.3, n_neg=2000)
    cfg = TrainConfig(seed=2, lam=0.01)
    start = init_assignment(X_pos, 2, 2, "random")
    _, a, trace = train_lhm(X_pos, X_neg, 2, 2, cfg, initial=start)
    assert purity(a.labels, np.repeat([0, 1], 50)) >= 0.98
    assert trace.final_iteration <= 10


def test_identical_positives_degrade_to_one_component():
    X_pos = np.tile([2.0, 2.0], (5, 1))
    X_neg = np.random.default_rng(0).standard_normal((50, 2))
    with pytest.warns(UserWarning, match="identical"):
        model, a, _ = train_lhm(X_pos, X_neg, 3, 2, TrainConfig())
    assert model.C == 1


def test_training_errors():
    X_pos, X_neg = blobs(3, [[3, 3]], n=2)
    with pytest.raises(ValueError):
        train_lhm(X_pos, X_neg, 3, 2, TrainConfig())
    with pytest.raises(ValueError):
        train_lhm(X_pos, X_neg[:1], 1, 2, TrainConfig())


def test_parallel_model_step_matches_serial():
    X_pos, X_neg = blobs(4, [[-3, 3], [3, 3], [0, -4]], n=20)
    cfg = TrainConfig(seed=5, lam=0.1)
    serial = train_lhm(X_pos, X_neg, 3, 2, cfg, jobs=1)
    threaded = train_lhm(X_pos, X_neg, 3, 2, cfg, jobs=3)
    assert serial[0] == threaded[0]
    np.testing.assert_array_equal(serial[1].labels, threaded[1].labels)
    assert serial[2].risks == threaded[2].risks


def test_training_is_deterministic():
    X_pos, X_neg = blobs(5, [[-3, 3], [3, 3]])
    cfg = TrainConfig(seed=7, lam=0.1)
    assert dumps_model(train_lhm(X_pos, X_neg, 2, 2, cfg)[0]) == dumps_model(train_lhm(X_pos, X_neg, 2, 2, cfg)[0])


def test_one_vs_all_shapes():
    rng = np.random.default_rng(6)
    X = np.vstack([rng.normal(c, 0.4, (20, 2)) for c in ([4, 0], [-4, 0], [0, 4])])
    y = np.repeat([1, 2, 3], 20)
    models = train_one_vs_all(X, y, 1, 3, TrainConfig(lam=0.1))
    assert len(models) == 3
    for k, m in enumerate(models):
        assert m.C == 1 and m.K == 3
        assert np.mean(predict(m, X[y == k + 1]) == 1) > 0.9


# serialization

def test_model_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(9)
    m = oracle.random_lhm(rng, 3, 2, 3)
    m.meta = {"lambda": 0.1, "alpha": 1.0}
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    assert back == m
    doc = json.loads(path.read_text())
    assert set(doc) == {"version", "dim", "C", "K", "components", "config"}
    assert doc["config"] == {"lambda": 0.1, "alpha": 1.0}


def test_model_header_mismatch_rejected():
    doc = json.loads(dumps_model(LhmModel([POS_QUADRANT])))
    doc["K"] = 3
    with pytest.raises(ValueError):
        model_from_dict(doc)


def test_trace_csv_round_trip():
    t = TrainTrace([1.0, 0.5, 0.1 + 0.2], [0, 7, 1], 3)
    text = t.to_csv()
    assert text.splitlines()[0] == "iter,risk,reassigned"
    back = TrainTrace.from_csv(text)
    assert back.risks == t.risks and back.reassigned == t.reassigned


def test_lhm_model_validation():
    with pytest.raises(ValueError):
        LhmModel([])
    with pytest.raises(ValueError):
        LhmModel([POS_QUADRANT, ComponentModel([[1.0, 0.0]], [0.0])])
    with pytest.raises(ValueError):
        Assignment([0, 2], 2)
