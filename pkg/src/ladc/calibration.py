"""Label-aware calibration of tail-class feature distributions.

For every tail anchor (a training instance, or the class mean in
``class_average`` mode) the ``m`` nearest head classes form a weighted prior
``N(mu0, Sigma0)``; the anchor then updates that prior to the posterior
``N(mu', Sigma')`` used for sampling synthetic tail features.
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import FeatureDataset, HeadTailPartition
from .errors import ConfigError, DimensionMismatch, InsufficientHeadClasses, MissingCovariance
from .stats import ClassStats, cholesky

MODES = ("per_instance", "class_average")
WEIGHTINGS = ("paper", "inverse_distance")


@dataclass
class CalibrationConfig:
    """Hyper-parameters of the calibration step.

    ``weighting="paper"`` makes a neighbour's weight grow with its count times
    its squared distance to the anchor; ``"inverse_distance"`` uses count over
    squared distance instead.
    """

    m: int = 2
    alpha: float = 0.15
    beta: float = 0.8
    n_s: int = 1
    mode: str = "per_instance"
    weighting: str = "paper"

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.alpha < 0 or not math.isfinite(self.alpha):
            raise ConfigError(f"alpha must be a non-negative real, got {self.alpha}")
        if self.beta < 0 or math.isnan(self.beta):
            raise ConfigError(f"beta must be non-negative, got {self.beta}")
        if self.n_s < 1:
            raise ConfigError(f"n_s must be >= 1, got {self.n_s}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")
        if self.mode == "per_instance":
            self.n_s = 1


class CholeskyCache:
    """Thread-safe memo of Cholesky factors keyed by an arbitrary hashable."""

    def __init__(self):
        self._store: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key, matrix: np.ndarray) -> np.ndarray:
        found = self._store.get(key)
        if found is not None:
            self.hits += 1
            return found
        factor = cholesky(matrix)
        factor.setflags(write=False)
        with self._lock:
            self.misses += 1
            return self._store.setdefault(key, factor)

    def __len__(self):
        return len(self._store)


_cache = CholeskyCache()


@dataclass(eq=False)
class CalibratedDistribution:
    source_class: int
    anchor: np.ndarray
    posterior_mean: np.ndarray
    posterior_covariance: np.ndarray
    neighbor_set: tuple[int, ...] = ()
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_s: int = 1
    _key: tuple | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.posterior_mean.size

    def cholesky_factor(self, cache: CholeskyCache | None = None) -> np.ndarray:
        """Factor of the posterior covariance, shared across identical priors."""
        cache = _cache if cache is None else cache
        key = self._key
        if key is None:
            key = ("cov", self.posterior_covariance.tobytes())
        return cache.get(key, self.posterior_covariance)

    def to_record(self) -> dict:
        return {
            "class": int(self.source_class),
            "anchor": self.anchor.tolist(),
            "neighbors": [int(i) for i in self.neighbor_set],
            "weights": self.weights.tolist(),
            "mean": self.posterior_mean.tolist(),
            "cov_diag": np.diag(self.posterior_covariance).tolist(),
        }


def _as_list(head_stats) -> list[ClassStats]:
    if isinstance(head_stats, Mapping):
        return list(head_stats.values())
    return list(head_stats)


def select_neighbors(anchor, head_stats: Sequence[ClassStats], m: int) -> tuple[int, ...]:
    """Ids of the ``m`` head classes whose means are closest to ``anchor``.

    Equal distances resolve to the lower class id.
    """
    stats = _as_list(head_stats)
    if len(stats) < m:
        raise InsufficientHeadClasses(f"need {m} head classes, only {len(stats)} available")
    anchor = np.asarray(anchor, dtype=np.float64)
    means = np.stack([s.mean for s in stats])
    if means.shape[1] != anchor.size:
        raise DimensionMismatch(f"anchor has {anchor.size} dims, head means have {means.shape[1]}")
    d2 = ((means - anchor) ** 2).sum(axis=1)
    ids = np.array([s.class_id for s in stats])
    order = np.lexsort((ids, d2))
    return tuple(int(ids[i]) for i in order[:m])


def prior_weights(anchor, neighbors: Sequence[ClassStats], weighting: str = "paper") -> np.ndarray:
    anchor = np.asarray(anchor, dtype=np.float64)
    counts = np.array([s.count for s in neighbors], dtype=np.float64)
    d2 = np.array([float(((s.mean - anchor) ** 2).sum()) for s in neighbors])
    if weighting == "paper":
        raw = counts * d2
    elif weighting == "inverse_distance":
        if np.any(d2 == 0):
            # coincident neighbours take all the mass, split by count
            raw = np.where(d2 == 0, counts, 0.0)
        else:
            raw = counts / d2
    else:
        raise ConfigError(f"unknown weighting {weighting!r}")
    total = raw.sum()
    if total <= 0:
        raw, total = counts, counts.sum()
    return raw / total


def calibrate_prior(weights, neighbors: Sequence[ClassStats], alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Weighted prior mean and ``sum w_i^2 Sigma_i + alpha I``."""
    w = np.asarray(weights, dtype=np.float64)
    for s in neighbors:
        if s.covariance is None:
            raise MissingCovariance(f"head class {s.class_id} has n={s.count}; covariance undefined")
    means = np.stack([s.mean for s in neighbors])
    covs = np.stack([s.covariance for s in neighbors])
    mu0 = w @ means
    sigma0 = np.einsum("i,ijk->jk", w**2, covs) + alpha * np.eye(means.shape[1])
    return mu0, sigma0


def _prior_share(beta: float, n_s: int) -> float:
    if math.isinf(beta):
        return 1.0
    return beta / (n_s + beta)


def calibrate_posterior(anchor, prior, beta: float, n_s: int = 1, *, source_class: int = -1,
                        neighbor_set: Iterable[int] = (), weights=None) -> CalibratedDistribution:
    anchor = np.asarray(anchor, dtype=np.float64)
    mu0, sigma0 = prior
    k = _prior_share(beta, n_s)
    # offset form keeps mean - anchor exactly proportional to mu0 - anchor
    mean = np.array(mu0, dtype=np.float64) if k == 1.0 else anchor + k * (mu0 - anchor)
    cov = k * sigma0
    return CalibratedDistribution(
        source_class=source_class,
        anchor=anchor,
        posterior_mean=mean,
        posterior_covariance=cov,
        neighbor_set=tuple(neighbor_set),
        weights=np.zeros(0) if weights is None else np.asarray(weights, dtype=np.float64),
        n_s=n_s,
    )


def calibrate_anchor(anchor, pool: Sequence[ClassStats], config: CalibrationConfig,
                     source_class: int = -1, n_s: int | None = None) -> CalibratedDistribution:
    by_id = {s.class_id: s for s in pool}
    ids = select_neighbors(anchor, pool, config.m)
    neigh = [by_id[i] for i in ids]
    w = prior_weights(anchor, neigh, config.weighting)
    prior = calibrate_prior(w, neigh, config.alpha)
    n_s = config.n_s if n_s is None else n_s
    dist = calibrate_posterior(anchor, prior, config.beta, n_s,
                               source_class=source_class, neighbor_set=ids, weights=w)
    dist._key = (ids, w.tobytes(), config.alpha, _prior_share(config.beta, n_s))
    return dist


def calibrate_tail(dataset: FeatureDataset, partition: HeadTailPartition, head_stats,
                   config: CalibrationConfig) -> list[CalibratedDistribution]:
    """Calibrated distributions for every tail anchor, ordered by class then row."""
    if not partition.tail:
        return []
    pool = [s for s in _as_list(head_stats) if s.has_covariance and partition.is_head(s.class_id)]
    pool.sort(key=lambda s: s.class_id)
    if len(pool) < config.m:
        raise InsufficientHeadClasses(
            f"need {config.m} head classes with n >= 2, found {len(pool)}"
        )
    out = []
    for c in sorted(partition.tail):
        x = dataset.class_features(c).astype(np.float64)
        if x.shape[0] == 0:
            continue
        if config.mode == "class_average":
            out.append(calibrate_anchor(x.mean(axis=0), pool, config, source_class=c))
        else:
            out.extend(calibrate_anchor(row, pool, config, source_class=c) for row in x)
    return out


def group_by_class(calibrations: Iterable[CalibratedDistribution]) -> dict[int, list[CalibratedDistribution]]:
    groups: dict[int, list[CalibratedDistribution]] = {}
    for cd in calibrations:
        groups.setdefault(cd.source_class, []).append(cd)
    return groups


def mixture_moments(calibrations: Sequence[CalibratedDistribution]) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the equal-weight mixture of ``calibrations``.

    This is the class-level distribution that uniform sampling over a class's
    calibrated distributions actually draws from.
    """
    means = np.stack([cd.posterior_mean for cd in calibrations])
    covs = np.stack([cd.posterior_covariance for cd in calibrations])
    mean = means.mean(axis=0)
    dev = means - mean
    return mean, covs.mean(axis=0) + dev.T @ dev / len(calibrations)


def write_debug_dump(calibrations: Iterable[CalibratedDistribution], path) -> int:
    n = 0
    with open(path, "w") as fh:
        for cd in calibrations:
            fh.write(json.dumps(cd.to_record()) + "\n")
            n += 1
    return n
