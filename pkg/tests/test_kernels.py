import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from catfit import kernels
from catfit.data import FeatureMatrix
from catfit.errors import ModelError

vec = lambda n: hnp.arrays(np.float64, n, elements=st.floats(-100, 100, allow_nan=False))
pos = lambda n: hnp.arrays(np.float64, n, elements=st.floats(1e-3, 100, allow_nan=False))


def test_mahalanobis_examples():
    assert kernels.mahalanobis_sq([3, 4], [0, 0], [1, 1]) == 25
    assert kernels.mahalanobis_sq([2, 2], [0, 0], [4, 1]) == 5
    assert kernels.mahalanobis_sq([1.5, -2], [1.5, -2], [3, 3]) == 0


def test_mahalanobis_errors():
    with pytest.raises(ModelError, match="length"):
        kernels.mahalanobis_sq([1, 2], [1], [1, 1])
    with pytest.raises(ModelError, match="positive"):
        kernels.mahalanobis_sq([1, 2], [0, 0], [1, 0])


def test_minkowski_examples():
    w = kernels.AttentionWeights([0.5, 0.5]).w
    assert kernels.weighted_minkowski([0, 0], [2, 2], w) == pytest.approx(2)
    assert kernels.weighted_minkowski([1, 1], [1, 1], w) == 0
    assert kernels.weighted_minkowski([0, 0], [3, 100], [1, 0]) == 3


def test_exp_similarity_examples():
    assert kernels.prototype_similarity(0.0) == 1
    assert kernels.exp_similarity(0.0, 1, 1) == 1
    assert kernels.exp_similarity(1.0, beta=1, q=2) == pytest.approx(0.36787944117144233, rel=1e-15)
    assert kernels.exp_similarity(0.0, beta=2) == 1


def test_empirical_stats_sample_variance():
    # n-1 denominator: members (0,0),(2,2) have variance 2 per dimension
    fm = FeatureMatrix(["a", "b", "c"], [[0, 0], [2, 2], [9, 9]], ["A", "A", "B"])
    mu, var, pooled = kernels.empirical_category_stats(fm, "A", rows=[0, 1])
    np.testing.assert_allclose(mu, [1, 1])
    floor = kernels.variance_floor(fm.values[[0, 1]])
    np.testing.assert_allclose(var, [2 + floor, 2 + floor], rtol=0, atol=0)
    assert pooled == pytest.approx(2, rel=1e-7)


def test_empirical_stats_identical_members_get_floor():
    fm = FeatureMatrix(["a", "b", "c", "d"], [[1, 5], [1, 5], [3, 0], [4, 2]], ["A", "A", "B", "B"])
    mu, var, _ = kernels.empirical_category_stats(fm, "A")
    eps = kernels.variance_floor(fm.values)
    assert eps == pytest.approx(1e-8 * np.mean(np.var(fm.values, axis=0, ddof=1)))
    np.testing.assert_array_equal(var, [eps, eps])


def test_empirical_stats_one_member():
    fm = FeatureMatrix(["a", "b", "c"], [[0.0], [1.0], [2.0]], ["A", "B", "B"])
    with pytest.raises(ModelError, match="at least 2"):
        kernels.empirical_category_stats(fm, "A")


def test_constant_features_floor_is_positive():
    assert kernels.variance_floor(np.ones((5, 3))) > 0


def test_attention_weights():
    w = kernels.AttentionWeights.from_logits([0.0, 1.0, -2.0])
    assert w.w.sum() == pytest.approx(1) and np.all(w.w > 0)
    with pytest.raises(ModelError):
        kernels.AttentionWeights([0.5, 0.6])
    with pytest.raises(ModelError):
        kernels.AttentionWeights([1.0, 0.0])


def test_covariance_spec_validation():
    cov = kernels.CovarianceSpec("identity", {"A": 1.0, "B": 1.0})
    assert cov.shared and cov.diag("A", 3).tolist() == [1, 1, 1]
    assert not kernels.CovarianceSpec("per-category-scalar-fitted", {"A": 2.0, "B": 3.0}).shared
    with pytest.raises(ModelError):
        kernels.CovarianceSpec("identity", {"A": 1.0, "B": -1.0})
    with pytest.raises(ModelError):
        kernels.CovarianceSpec("full", {"A": 1.0, "B": 1.0})


@given(st.integers(1, 8).flatmap(lambda n: st.tuples(vec(n), vec(n))))
def test_mahalanobis_unit_variance_is_squared_euclidean(yx):
    y, mu = yx
    expected = float(np.sum((y - mu) ** 2))
    got = kernels.mahalanobis_sq(y, mu, np.ones_like(y))
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-300)


@given(st.integers(1, 6).flatmap(lambda n: st.tuples(vec(n), vec(n), pos(n))),
       st.floats(1e-3, 1e3))
def test_mahalanobis_homogeneity(args, s):
    y, mu, sig = args
    base = kernels.mahalanobis_sq(y, mu, sig)
    assert kernels.mahalanobis_sq(y, mu, s * sig) == pytest.approx(base / s, rel=1e-10, abs=1e-300)


@given(st.integers(1, 6).flatmap(lambda n: st.tuples(vec(n), vec(n), vec(n), pos(n))))
def test_minkowski_symmetric_and_triangle(args):
    x, y, z, raw = args
    w = raw / raw.sum()
    dxy = kernels.weighted_minkowski(x, y, w)
    assert dxy == kernels.weighted_minkowski(y, x, w)
    dxz = kernels.weighted_minkowski(x, z, w)
    dzy = kernels.weighted_minkowski(z, y, w)
    assert dxy <= dxz + dzy + 1e-9 * (1 + dxz + dzy)


@given(st.floats(0, 20), st.floats(1e-6, 5), st.floats(0.01, 3))
def test_exp_similarity_strictly_decreasing(d, delta, beta):
    assert kernels.exp_similarity(d + delta, beta, q=2) < kernels.exp_similarity(d, beta, q=2) or \
        kernels.exp_similarity(d, beta, q=2) == 0.0


def _brute_exemplar(Y, X, w, beta):
    D = ((Y[:, None, :] - X[None, :, :]) ** 2 * w).sum(axis=2)
    A = -beta * D
    m = A.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(A - m).sum(axis=1, keepdims=True)))[:, 0]
    R = np.exp(A - lse[:, None])
    sq = np.einsum("ij,ijk->ik", R, (Y[:, None, :] - X[None, :, :]) ** 2)
    return lse, sq


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_exemplar_kernel_matches_brute_force(backend, rng):
    try:
        mod = kernels.backend_module(backend)
    except ImportError:
        pytest.skip("numba not installed")
    Y = rng.normal(size=(17, 5))
    X = rng.normal(size=(23, 5))
    w = rng.dirichlet(np.ones(5))
    for beta in (0.1, 3.0, 300.0):
        lse, sq = mod.exemplar_side(Y, X, w, beta, True)
        ref_lse, ref_sq = _brute_exemplar(Y, X, w, beta)
        np.testing.assert_allclose(lse, ref_lse, rtol=1e-11, atol=1e-9)
        np.testing.assert_allclose(sq, ref_sq, rtol=1e-8, atol=1e-10)
        lse_only, none = mod.exemplar_side(Y, X, w, beta, False)
        assert none is None
        np.testing.assert_allclose(lse_only, ref_lse, rtol=1e-11, atol=1e-9)


def test_backends_agree(rng):
    try:
        nb = kernels.backend_module("numba")
    except ImportError:
        pytest.skip("numba not installed")
    npk = kernels.backend_module("numpy")
    Y, X = rng.normal(size=(64, 16)), rng.normal(size=(200, 16))
    w = rng.dirichlet(np.ones(16))
    a, b = nb.exemplar_side(Y, X, w, 2.0, True), npk.exemplar_side(Y, X, w, 2.0, True)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(nb.weighted_sq_distances(Y, X, w), npk.weighted_sq_distances(Y, X, w),
                               rtol=1e-12, atol=1e-12)


def test_exemplar_log_space_survives_large_distances():
    Y = np.array([[0.0]])
    X = np.array([[30.0], [31.0]])
    lse, _ = kernels.exemplar_side(Y, X, np.ones(1), beta=1.0)
    assert math.isfinite(lse[0])
    assert lse[0] == pytest.approx(-900 + math.log1p(math.exp(-61)))


def test_empty_exemplar_set():
    with pytest.raises(ModelError, match="empty"):
        kernels.exemplar_side(np.zeros((1, 2)), np.zeros((0, 2)), np.ones(2) / 2, 1.0)
