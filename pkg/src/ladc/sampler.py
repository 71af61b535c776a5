"""Stage-2 re-balanced batch stream.

``P_i ~ n_1 / n_i^tau`` is the temperature weight of class ``i``.  With
``draw_unit="instance"`` (default) it weights each training instance of the
class, so a class is drawn with probability ``~ n_i P_i = n_1 n_i^(1-tau)``
and ``tau = 1`` is exactly class-balanced.  With ``draw_unit="class"`` the
class itself is drawn with probability ``P_i``.

Head classes contribute a real training row, tail classes a fresh draw from
one of their calibrated Gaussians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .calibration import CalibratedDistribution, group_by_class
from .dataset import FeatureDataset, HeadTailPartition
from .errors import ConfigError, MissingCalibration, ZeroCount
from .stats import make_rng


class AliasTable:
    """Walker/Vose alias table for O(1) categorical draws."""

    def __init__(self, probabilities):
        p = np.asarray(probabilities, dtype=np.float64)
        k = p.size
        scaled = p * k / p.sum()
        prob = np.ones(k)
        alias = np.arange(k)
        small = [i for i in range(k) if scaled[i] < 1.0]
        large = [i for i in range(k) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = l
            scaled[l] -= 1.0 - scaled[s]
            (small if scaled[l] < 1.0 else large).append(l)
        # leftovers are 1 up to rounding
        self.prob = prob
        self.alias = alias

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.integers(0, self.prob.size, size=size)
        u = rng.random(size)
        return np.where(u < self.prob[idx], idx, self.alias[idx])


DRAW_UNITS = ("instance", "class")


@dataclass(frozen=True, eq=False)
class SamplingPlan:
    probabilities: np.ndarray
    tau: float
    counts: np.ndarray
    n_1: int
    draw_unit: str = "instance"

    @property
    def num_classes(self) -> int:
        return self.probabilities.size

    @property
    def class_draw_probabilities(self) -> np.ndarray:
        """Probability that one batch slot is filled from each class."""
        if self.draw_unit == "class":
            return self.probabilities
        mass = self.probabilities * self.counts
        return mass / mass.sum()


def sampling_probabilities(counts, tau: float, draw_unit: str = "instance") -> SamplingPlan:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0:
        raise ZeroCount("no classes to sample")
    if np.any(counts < 1):
        raise ZeroCount(f"class {int(np.flatnonzero(counts < 1)[0])} has no training instances")
    if tau < 0 or not math.isfinite(tau):
        raise ConfigError(f"tau must be a non-negative real, got {tau}")
    if draw_unit not in DRAW_UNITS:
        raise ConfigError(f"draw_unit must be one of {DRAW_UNITS}, got {draw_unit!r}")
    n_1 = int(counts.max())
    # log-space keeps n^tau from overflowing at large tau
    log_r = math.log(n_1) - tau * np.log(counts.astype(np.float64))
    r = np.exp(log_r - log_r.max())
    return SamplingPlan(r / r.sum(), float(tau), counts, n_1, draw_unit)


@dataclass
class BatchSpec:
    batch_size: int = 128
    seed: int | np.random.SeedSequence = 0
    epoch_length: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


class Batch(NamedTuple):
    features: np.ndarray
    labels: np.ndarray
    synthetic: np.ndarray


class ResampledStream:
    """Iterator over re-balanced batches; owns one PCG64 stream."""

    def __init__(self, plan: SamplingPlan, partition: HeadTailPartition, dataset: FeatureDataset,
                 calibrations: Sequence[CalibratedDistribution], spec: BatchSpec):
        self.plan = plan
        self.spec = spec
        self.dataset = dataset
        self.rng = make_rng(spec.seed)
        draw_p = plan.class_draw_probabilities
        self.alias = AliasTable(draw_p)
        self.epoch_length = spec.epoch_length or max(1, math.ceil(len(dataset) / spec.batch_size))
        self.dim = dataset.dim
        head = set(partition.head)
        self._rows = {c: np.flatnonzero(dataset.labels == c) for c in head}
        groups = group_by_class(calibrations)
        self._means, self._factors = {}, {}
        for c in partition.tail:
            if draw_p[c] == 0:
                continue
            cds = groups.get(c)
            if not cds:
                raise MissingCalibration(f"tail class {c} has no calibrated distribution")
            self._means[c] = np.stack([cd.posterior_mean for cd in cds])
            self._factors[c] = np.stack([cd.cholesky_factor() for cd in cds])
        self._is_tail = np.zeros(plan.num_classes, dtype=bool)
        self._is_tail[list(partition.tail)] = True

    def next_batch(self) -> Batch:
        n = self.spec.batch_size
        labels = self.alias.draw(self.rng, n)
        feats = np.empty((n, self.dim))
        synthetic = self._is_tail[labels]
        for c in np.unique(labels):
            slots = np.flatnonzero(labels == c)
            if synthetic[slots[0]]:
                means, factors = self._means[c], self._factors[c]
                pick = self.rng.integers(0, means.shape[0], size=slots.size)
                eps = self.rng.standard_normal((slots.size, self.dim))
                feats[slots] = means[pick] + np.einsum("kij,kj->ki", factors[pick], eps)
            else:
                rows = self._rows[c]
                feats[slots] = self.dataset.features[rows[self.rng.integers(0, rows.size, size=slots.size)]]
        return Batch(feats, labels, synthetic)

    def epoch(self) -> Iterator[Batch]:
        for _ in range(self.epoch_length):
            yield self.next_batch()

    def __iter__(self):
        return self.epoch()


def draw_batch(plan: SamplingPlan, partition: HeadTailPartition, dataset: FeatureDataset,
               calibrations: Sequence[CalibratedDistribution], spec: BatchSpec) -> Batch:
    """First batch of a fresh session seeded from ``spec.seed``."""
    return ResampledStream(plan, partition, dataset, calibrations, spec).next_batch()


class InstanceStream:
    """Plain instance-balanced shuffling over a dataset (Stage 1)."""

    def __init__(self, dataset: FeatureDataset, spec: BatchSpec):
        self.dataset = dataset
        self.spec = spec
        self.rng = make_rng(spec.seed)
        self.epoch_length = spec.epoch_length or max(1, math.ceil(len(dataset) / spec.batch_size))

    def epoch(self) -> Iterator[Batch]:
        n = len(self.dataset)
        order = self.rng.permutation(n)
        bs = self.spec.batch_size
        for k in range(self.epoch_length):
            idx = order[(k * bs) % n:(k * bs) % n + bs]
            yield Batch(self.dataset.features[idx].astype(np.float64), self.dataset.labels[idx],
                        np.zeros(idx.size, dtype=bool))

    def __iter__(self):
        return self.epoch()
