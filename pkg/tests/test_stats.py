import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lhm.minimax import ComponentModel
from lhm.stats import GaussianStats, estimate_gaussian, refine_negative_stats

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
samples = arrays(float, st.tuples(st.integers(2, 12), st.integers(1, 3)), elements=finite)


def test_identical_samples_give_ridge_only():
    s = estimate_gaussian([[1, 1], [1, 1]], ridge=0.01)
    np.testing.assert_array_equal(s.mean, [1, 1])
    np.testing.assert_allclose(s.covariance, 0.01 * np.eye(2), rtol=0, atol=1e-15)
    assert s.count == 2


def test_two_point_formula_and_pd_requirement():
    with pytest.raises(ValueError, match="positive definite"):
        estimate_gaussian([[0, 0], [2, 0]], ridge=0)
    s = estimate_gaussian([[0, 0], [2, 0]], ridge=0.01)
    np.testing.assert_array_equal(s.mean, [1, 0])
    np.testing.assert_allclose(s.covariance, [[2.01, 0], [0, 0.01]], atol=1e-15)


def test_large_sample_matches_generator():
    rng = np.random.default_rng(7)
    X = rng.multivariate_normal([3, -1], np.diag([4, 1]), size=10_000)
    s = estimate_gaussian(X, ridge=0)
    assert np.all(np.abs(s.mean - [3, -1]) < 0.1)
    assert np.all(np.abs(np.diag(s.covariance) - [4, 1]) < 0.2)


def test_single_sample_zero_covariance():
    s = estimate_gaussian([[2.0, 3.0]], ridge=0.5)
    np.testing.assert_array_equal(s.covariance, 0.5 * np.eye(2))
    assert s.count == 1


def test_default_ridge_is_relative_to_trace():
    X = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 4.0]])
    raw = np.cov(X.T)
    s = estimate_gaussian(X)
    np.testing.assert_allclose(s.covariance, raw + 1e-4 * np.trace(raw) / 2 * np.eye(2), rtol=1e-14)


def test_errors():
    with pytest.raises(ValueError, match="no samples"):
        estimate_gaussian(np.zeros((0, 2)))
    with pytest.raises(ValueError, match="invalid data"):
        estimate_gaussian([[0.0, np.nan], [1.0, 1.0]])
    with pytest.raises(ValueError, match="not symmetric"):
        GaussianStats([0, 0], [[1, 0.5], [0, 1]])


def test_stats_are_read_only():
    s = estimate_gaussian([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]])
    with pytest.raises(ValueError):
        s.mean[0] = 5.0
    np.testing.assert_allclose(s.cholesky @ s.cholesky.T, s.covariance, rtol=1e-14)


@given(samples, st.randoms())
def test_permutation_invariance(X, r):
    perm = list(range(X.shape[0]))
    r.shuffle(perm)
    a, b = estimate_gaussian(X, ridge=1.0), estimate_gaussian(X[perm], ridge=1.0)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
    np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-9)


@given(samples, arrays(float, 3, elements=finite))
def test_translation_equivariance(X, t):
    t = t[: X.shape[1]]
    a, b = estimate_gaussian(X, ridge=1.0), estimate_gaussian(X + t, ridge=1.0)
    np.testing.assert_allclose(b.mean, a.mean + t, atol=1e-10)
    np.testing.assert_allclose(b.covariance, a.covariance, atol=1e-10 * max(1.0, np.abs(a.covariance).max()))


QUADRANT = ComponentModel([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])


def test_refine_fallback_when_no_false_positives():
    fallback = GaussianStats([0, 0], np.eye(2))
    X_neg = -1.0 - np.random.default_rng(0).random((20, 2))
    assert refine_negative_stats(QUADRANT, X_neg, fallback) is fallback


def test_refine_with_everything_inside_is_plain_estimate():
    X_neg = 1.0 + np.random.default_rng(1).random((20, 2))
    fallback = GaussianStats([0, 0], np.eye(2))
    got = refine_negative_stats(QUADRANT, X_neg, fallback, min_count=1)
    want = estimate_gaussian(X_neg)
    np.testing.assert_array_equal(got.mean, want.mean)
    np.testing.assert_array_equal(got.covariance, want.covariance)


def test_refine_quadrant_grid():
    # 5x5 grid on [-1,1]^2: the 9 points with both coordinates >= 0 have mean (0.5, 0.5)
    # and unbiased variance 0.1875 per axis, no correlation (filtered by hand)
    g = np.linspace(-1, 1, 5)
    X = np.array([(a, b) for a in g for b in g])
    got = refine_negative_stats(QUADRANT, X, GaussianStats([0, 0], np.eye(2)), ridge=0.0)
    assert got.count == 9
    np.testing.assert_allclose(got.mean, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(got.covariance, 0.1875 * np.eye(2), atol=1e-15)


@given(arrays(float, (15, 2), elements=st.floats(-3, 3)))
def test_refine_count_never_exceeds_input(X):
    fallback = GaussianStats([0, 0], np.eye(2), 0)
    got = refine_negative_stats(QUADRANT, X, fallback, ridge=1e-3)
    assert got.count <= X.shape[0]
