"""Gaussian class statistics, Cholesky factorisation and seeded sampling.

Randomness throughout the package comes from numpy's ``PCG64`` bit generator
seeded through ``SeedSequence`` (which provides stream splitting); standard
normals use numpy's ziggurat sampler.  Holding to that pair keeps sampled
streams reproducible across builds on the same numpy major version.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import FeatureDataset
from .errors import DimensionMismatch, EmptyClass, InvalidCovariance, NotPositiveDefinite

JITTER_LADDER = (0.0, 1e-6, 1e-5, 1e-4, 1e-3)


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator from an int seed or a ``SeedSequence``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class ClassStats:
    """Mean and (n-1)-normalised covariance of one class.

    ``covariance`` is ``None`` when the class holds a single instance.
    """

    class_id: int
    count: int
    mean: np.ndarray
    covariance: np.ndarray | None

    @property
    def has_covariance(self) -> bool:
        return self.covariance is not None


def class_statistics(dataset: FeatureDataset, class_id: int) -> ClassStats:
    x = dataset.class_features(class_id).astype(np.float64)
    n = x.shape[0]
    if n == 0:
        raise EmptyClass(f"class {class_id} has no instances")
    # two-pass: mean first, then centred outer products
    mean = x.sum(axis=0) / n
    if n < 2:
        return ClassStats(class_id, n, mean, None)
    dev = x - mean
    cov = dev.T @ dev / (n - 1)
    cov = (cov + cov.T) / 2
    return ClassStats(class_id, n, mean, cov)


def all_class_statistics(dataset: FeatureDataset, classes=None) -> dict[int, ClassStats]:
    if classes is None:
        classes = [c for c, n in enumerate(dataset.counts) if n > 0]
    return {int(c): class_statistics(dataset, int(c)) for c in classes}


def squared_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    d = a - b
    return float(d @ d)


def cholesky(matrix) -> np.ndarray:
    """Lower Cholesky factor, adding ``eps * I`` from :data:`JITTER_LADDER` on failure.

    An exactly zero matrix factors to the zero matrix.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max())) if a.size else 1.0
    if not np.allclose(a, a.T, rtol=0, atol=1e-9 * scale):
        raise InvalidCovariance("matrix is not symmetric")
    if not np.any(a):
        return np.zeros_like(a)
    eye = np.eye(a.shape[0])
    for eps in JITTER_LADDER:
        try:
            return np.linalg.cholesky(a + eps * eye)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(
        f"factorisation failed with jitter up to {JITTER_LADDER[-1]:g}; "
        f"min eigenvalue {np.linalg.eigvalsh(a).min():.3g}"
    )


class GaussianSampler:
    """Draws ``mean + L @ eps`` with ``eps`` from a private PCG64 stream."""

    def __init__(self, mean, covariance=None, *, cholesky_factor=None, seed=0):
        self.mean = np.asarray(mean, dtype=np.float64)
        if cholesky_factor is None:
            if covariance is None:
                raise ValueError("need covariance or cholesky_factor")
            cholesky_factor = cholesky(covariance)
        self.cholesky_factor = np.asarray(cholesky_factor, dtype=np.float64)
        if self.cholesky_factor.shape != (self.mean.size, self.mean.size):
            raise DimensionMismatch(
                f"factor {self.cholesky_factor.shape} does not match mean of size {self.mean.size}"
            )
        self.rng = make_rng(seed)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, count: int) -> np.ndarray:
        return sample_gaussian(self, count)


def sample_gaussian(sampler: GaussianSampler, count: int) -> np.ndarray:
    if count < 0:
        raise ValueError("count must be non-negative")
    eps = sampler.rng.standard_normal((count, sampler.dim))
    return sampler.mean + eps @ sampler.cholesky_factor.T


def empirical_gaussian(x: np.ndarray, ridge: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and (n-1) covariance of rows of ``x`` plus ``ridge * I``."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    d = x.shape[1]
    if x.shape[0] < 2:
        cov = np.zeros((d, d))
    else:
        dev = x - mean
        cov = dev.T @ dev / (x.shape[0] - 1)
    return mean, cov + ridge * np.eye(d)
