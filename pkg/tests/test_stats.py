import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from conftest import random_spd
from ladc.dataset import FeatureDataset
from ladc.errors import DimensionMismatch, EmptyClass, InvalidCovariance, NotPositiveDefinite
from ladc.stats import (
    GaussianSampler,
    all_class_statistics,
    cholesky,
    class_statistics,
    empirical_gaussian,
    make_rng,
    sample_gaussian,
    squared_distance,
)


def one_class(rows):
    rows = np.asarray(rows, dtype=float)
    return FeatureDataset(rows, np.zeros(len(rows), dtype=int), 1)


class TestClassStatistics:
    def test_two_points(self):
        s = class_statistics(one_class([[0, 0], [2, 0]]), 0)
        assert s.count == 2
        np.testing.assert_array_equal(s.mean, [1, 0])
        np.testing.assert_array_equal(s.covariance, [[2, 0], [0, 0]])

    def test_identical_rows_have_zero_covariance(self):
        s = class_statistics(one_class([[1.5, -2.0, 3.0]] * 6), 0)
        assert not s.covariance.any()

    def test_single_instance_has_no_covariance(self):
        s = class_statistics(one_class([[1, 2]]), 0)
        np.testing.assert_array_equal(s.mean, [1, 2])
        assert s.covariance is None and not s.has_covariance

    def test_empty_class(self):
        ds = FeatureDataset(np.zeros((2, 2)), np.array([0, 0]), 2)
        with pytest.raises(EmptyClass):
            class_statistics(ds, 1)
        assert list(all_class_statistics(ds)) == [0]

    def test_matches_numpy_cov(self, rng):
        x = rng.standard_normal((40, 5)) * [1, 2, 3, 4, 5] + 7
        s = class_statistics(one_class(x), 0)
        x32 = x.astype(np.float32).astype(np.float64)
        np.testing.assert_allclose(s.mean, x32.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(s.covariance, np.cov(x32, rowvar=False), rtol=1e-10)

    def test_large_offset_is_stable(self):
        # a naive sum-of-squares pass loses every digit here
        r = np.random.default_rng(0)
        x = 1e4 + r.standard_normal((5000, 2)).astype(np.float32)
        s = class_statistics(one_class(x), 0)
        np.testing.assert_allclose(s.covariance, np.cov(x.astype(np.float64), rowvar=False), rtol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.integers(1, 8))
    def test_row_order_does_not_matter(self, seed, n, d):
        r = np.random.default_rng(seed)
        x = r.standard_normal((n, d))
        a = class_statistics(one_class(x), 0)
        b = class_statistics(one_class(x[r.permutation(n)]), 0)
        np.testing.assert_allclose(a.mean, b.mean, rtol=0, atol=1e-12)
        np.testing.assert_allclose(a.covariance, b.covariance, rtol=0, atol=1e-12)


class TestSquaredDistance:
    def test_examples(self):
        assert squared_distance([0, 0], [3, 4]) == 25
        assert squared_distance([1], [-1]) == 4
        assert squared_distance([2.5, 1], [2.5, 1]) == 0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            squared_distance([1, 2], [1, 2, 3])

    # dyadic grid keeps squares exact, so "zero" is not an underflow artefact
    vec = hnp.arrays(np.float64, 4, elements=st.integers(-8000, 8000).map(lambda v: v / 8))

    @given(vec, vec)
    def test_symmetric_and_zero_iff_equal(self, a, b):
        assert squared_distance(a, b) == squared_distance(b, a)
        assert squared_distance(a, b) >= 0
        assert (squared_distance(a, b) == 0) == bool(np.array_equal(a, b))


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_textbook_two_by_two(self):
        np.testing.assert_allclose(cholesky([[4, 2], [2, 3]]), [[2, 0], [1, math.sqrt(2)]], atol=1e-15)

    def test_negative_definite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky([[-1.0]])

    def test_asymmetric(self):
        with pytest.raises(InvalidCovariance):
            cholesky([[1.0, 0.5], [0.0, 1.0]])

    def test_zero_matrix(self):
        np.testing.assert_array_equal(cholesky(np.zeros((3, 3))), np.zeros((3, 3)))

    def test_singular_uses_jitter(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        l = cholesky(a)
        assert np.linalg.norm(l @ l.T - a) / np.linalg.norm(a) < 1e-3
        assert np.all(np.diag(l) >= 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 32))
    def test_round_trip(self, seed, d):
        a = random_spd(np.random.default_rng(seed), d)
        l = cholesky(a)
        assert np.allclose(l, np.tril(l))
        assert np.all(np.diag(l) >= 0)
        assert np.linalg.norm(l @ l.T - a) / np.linalg.norm(a) < 1e-6


class TestSampling:
    def test_zero_covariance_returns_mean(self):
        s = GaussianSampler([1.0, -2.0], np.zeros((2, 2)), seed=1)
        out = sample_gaussian(s, 50)
        assert (out == [1.0, -2.0]).all()

    def test_zero_count(self):
        out = sample_gaussian(GaussianSampler([0.0, 0.0], np.eye(2)), 0)
        assert out.shape == (0, 2)

    def test_negative_count(self):
        with pytest.raises(ValueError):
            sample_gaussian(GaussianSampler([0.0], np.eye(1)), -1)

    def test_unit_normal_moments(self):
        x = sample_gaussian(GaussianSampler([0.0], [[1.0]], seed=2), 100_000)
        assert abs(x.mean()) < 0.02
        assert abs(x.var(ddof=1) - 1) < 0.05

    def test_correlated_moments_within_five_sigma(self, rng):
        d, k = 6, 100_000
        cov = random_spd(rng, d)
        mean = rng.standard_normal(d)
        x = GaussianSampler(mean, cov, seed=9).sample(k)
        se = np.sqrt(np.diag(cov) / k)
        assert np.all(np.abs(x.mean(axis=0) - mean) < 5 * se)
        # var(S_ij) = (S_ij^2 + S_ii S_jj) / k for Gaussian data
        se_cov = np.sqrt((cov**2 + np.outer(np.diag(cov), np.diag(cov))) / k)
        assert np.all(np.abs(np.cov(x, rowvar=False) - cov) < 5 * se_cov)

    def test_seed_reproducible(self):
        a = GaussianSampler([0.0, 0.0], np.eye(2), seed=42).sample(10)
        b = GaussianSampler([0.0, 0.0], np.eye(2), seed=42).sample(10)
        assert a.tobytes() == b.tobytes()

    def test_seed_sequence_children_differ(self):
        kids = np.random.SeedSequence(0).spawn(2)
        a = make_rng(kids[0]).standard_normal(4)
        b = make_rng(kids[1]).standard_normal(4)
        assert not np.array_equal(a, b)

    def test_factor_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            GaussianSampler([0.0, 0.0], cholesky_factor=np.eye(3))


def test_empirical_gaussian_ridge():
    x = np.array([[0.0, 0.0], [2.0, 0.0]])
    mean, cov = empirical_gaussian(x, ridge=0.5)
    np.testing.assert_array_equal(mean, [1, 0])
    np.testing.assert_allclose(cov, [[2.5, 0], [0, 0.5]])
