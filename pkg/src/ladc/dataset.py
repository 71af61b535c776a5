"""Labelled feature datasets, the on-disk container, and head/tail splits.

Binary container layout (little endian)::

    b"LADC" | u32 version=1 | u32 D | u32 C | u64 N | N x u32 labels | N*D x f32 features

CSV files are header-less rows ``label,f_0,...,f_{D-1}``.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    InvalidCovariance,
    LabelOutOfRange,
    MalformedHeader,
    NonFiniteValue,
    UnreadableFile,
)

MAGIC = b"LADC"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """``N`` feature rows of dimension ``dim`` with labels in ``[0, num_classes)``.

    Features are held as float32 (the container precision); arrays are made
    read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise DimensionMismatch(f"features must be 2-D, got shape {feats.shape}")
        if labels.shape != (feats.shape[0],):
            raise DimensionMismatch(
                f"{labels.shape[0] if labels.ndim else 0} labels for {feats.shape[0]} rows"
            )
        if self.num_classes < 1:
            raise LabelOutOfRange(f"num_classes must be positive, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            bad = int(np.flatnonzero((labels < 0) | (labels >= self.num_classes))[0])
            raise LabelOutOfRange(f"row {bad}: label {labels[bad]} not in [0, {self.num_classes})")
        finite = np.isfinite(feats).all(axis=1)
        if not finite.all():
            raise NonFiniteValue(f"row {int(np.flatnonzero(~finite)[0])}: non-finite feature")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def class_features(self, class_id: int) -> np.ndarray:
        return self.features[self.labels == class_id]

    def __eq__(self, other):
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
        )


# -- container I/O ---------------------------------------------------------

def save_binary(dataset: FeatureDataset, path) -> None:
    n, d = dataset.features.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d, dataset.num_classes, n))
        fh.write(dataset.labels.astype("<u4").tobytes())
        fh.write(dataset.features.astype("<f4").tobytes())


def save_csv(dataset: FeatureDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label), *(repr(float(v)) for v in row)])


def _load_binary(path) -> FeatureDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedHeader(f"byte {len(raw)}: header truncated ({_HEADER.size} bytes expected)")
    magic, version, d, c, n = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise MalformedHeader(f"byte 0: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeader(f"byte 4: unsupported version {version}")
    if d == 0:
        raise MalformedHeader("byte 8: dimension must be positive")
    if c == 0:
        raise MalformedHeader("byte 12: class count must be positive")
    label_end = _HEADER.size + 4 * n
    expected = label_end + 4 * n * d
    if len(raw) != expected:
        raise DimensionMismatch(
            f"byte {min(len(raw), expected)}: payload is {len(raw)} bytes, header implies {expected}"
        )
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=_HEADER.size)
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=label_end).reshape(n, d)
    bad = np.flatnonzero(labels >= c)
    if bad.size:
        i = int(bad[0])
        raise LabelOutOfRange(f"byte {_HEADER.size + 4 * i}: label {labels[i]} >= C={c}")
    finite = np.isfinite(feats)
    if not finite.all():
        flat = int(np.flatnonzero(~finite.ravel())[0])
        raise NonFiniteValue(f"byte {label_end + 4 * flat}: non-finite feature (row {flat // d})")
    return FeatureDataset(feats, labels.astype(np.int64), int(c))


def _load_csv(path, dim: int | None = None, num_classes: int | None = None) -> FeatureDataset:
    labels: list[int] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                label = int(rec[0])
                vals = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise MalformedHeader(f"row {lineno}: {exc}") from None
            if dim is None:
                dim = len(vals)
            if len(vals) != dim:
                raise DimensionMismatch(f"row {lineno}: {len(vals)} values, expected D={dim}")
            if not all(math.isfinite(v) for v in vals):
                raise NonFiniteValue(f"row {lineno}: non-finite feature")
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise LabelOutOfRange(f"row {lineno}: label {label}")
            labels.append(label)
            rows.append(vals)
    if dim is None or dim == 0:
        raise EmptyDataset(f"{path}: no feature rows")
    if num_classes is None:
        num_classes = max(labels) + 1
    return FeatureDataset(np.asarray(rows, dtype=np.float64).reshape(-1, dim), np.asarray(labels), num_classes)


def load_dataset(path, format: str | None = None, *, dim: int | None = None,
                 num_classes: int | None = None) -> FeatureDataset:
    """Read a dataset from ``path``.

    ``format`` is ``"binary"`` or ``"csv"``; when omitted it is inferred from the
    suffix (``.csv`` means CSV, anything else binary).  ``dim`` and
    ``num_classes`` only apply to CSV, whose rows carry no header.
    """
    if format is None:
        format = "csv" if str(path).lower().endswith(".csv") else "binary"
    if format not in ("binary", "csv"):
        raise ValueError(f"unknown format {format!r}")
    try:
        if format == "binary":
            return _load_binary(path)
        return _load_csv(path, dim=dim, num_classes=num_classes)
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc.strerror or exc}") from None


def save_dataset(dataset: FeatureDataset, path, format: str | None = None) -> None:
    if format is None:
        format = "csv" if str(path).lower().endswith(".csv") else "binary"
    (save_csv if format == "csv" else save_binary)(dataset, path)


# -- head / tail -------------------------------------------------------------

@dataclass(frozen=True)
class HeadTailPartition:
    head: tuple[int, ...]
    tail: tuple[int, ...]
    mass_ratio: float

    def is_head(self, class_id: int) -> bool:
        return class_id in self.head

    @property
    def num_classes(self) -> int:
        return len(self.head) + len(self.tail)


def partition_head_tail(counts: Sequence[int], mass_ratio: float = 0.6) -> HeadTailPartition:
    """Split classes into the most frequent ones holding ``mass_ratio`` of the data and the rest.

    Classes are ranked by count (descending, ties by ascending index); the head
    is the shortest prefix whose cumulative count reaches ``mass_ratio * N``.
    """
    counts = [int(c) for c in counts]
    if not counts or sum(counts) == 0:
        raise EmptyDataset("cannot partition an empty dataset")
    if not 0 < mass_ratio <= 1:
        raise ValueError(f"mass_ratio must lie in (0, 1], got {mass_ratio}")
    order = sorted(range(len(counts)), key=lambda i: (-counts[i], i))
    threshold = mass_ratio * sum(counts)
    cum = 0
    for k, idx in enumerate(order, start=1):
        cum += counts[idx]
        if cum >= threshold * (1 - 1e-12):
            break
    return HeadTailPartition(tuple(order[:k]), tuple(order[k:]), float(mass_ratio))


# -- synthetic mixtures ------------------------------------------------------

def long_tail_counts(num_classes: int, imbalance_factor: float, max_count: int) -> list[int]:
    """Exponential profile ``round(n_1 * IF^(-i/(C-1)))`` with a floor of one."""
    if num_classes == 1:
        return [int(max_count)]
    return [
        max(1, math.floor(max_count * imbalance_factor ** (-i / (num_classes - 1)) + 0.5))
        for i in range(num_classes)
    ]


@dataclass
class SyntheticSpec:
    num_classes: int
    dim: int
    imbalance_factor: float
    max_count: int
    true_means: np.ndarray
    true_covariances: np.ndarray
    seed: int = 0
    test_per_class: int = 100

    def __post_init__(self):
        self.true_means = np.asarray(self.true_means, dtype=np.float64)
        self.true_covariances = np.asarray(self.true_covariances, dtype=np.float64)
        c, d = self.num_classes, self.dim
        if self.true_means.shape != (c, d) or self.true_covariances.shape != (c, d, d):
            raise DimensionMismatch(
                f"means {self.true_means.shape} / covariances {self.true_covariances.shape} "
                f"do not match C={c}, D={d}"
            )
        if self.imbalance_factor < 1:
            raise ValueError("imbalance_factor must be >= 1")

    @property
    def counts(self) -> list[int]:
        return long_tail_counts(self.num_classes, self.imbalance_factor, self.max_count)


def _psd_factor(cov: np.ndarray, class_id: int) -> np.ndarray:
    scale = max(1.0, float(np.abs(cov).max()))
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-9 * scale):
        raise InvalidCovariance(f"class {class_id}: covariance is not symmetric")
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-9 * scale:
        raise InvalidCovariance(f"class {class_id}: covariance has eigenvalue {vals.min():.3g}")
    return vecs * np.sqrt(np.clip(vals, 0, None))


def generate_synthetic(spec: SyntheticSpec) -> tuple[FeatureDataset, FeatureDataset]:
    """Draw a long-tailed train split and a balanced test split from the spec's mixture."""
    factors = [_psd_factor(spec.true_covariances[i], i) for i in range(spec.num_classes)]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))

    def draw(counts):
        feats, labels = [], []
        for i, n in enumerate(counts):
            z = rng.standard_normal((n, spec.dim))
            feats.append(spec.true_means[i] + z @ factors[i].T)
            labels.append(np.full(n, i))
        return FeatureDataset(np.concatenate(feats), np.concatenate(labels), spec.num_classes)

    train = draw(spec.counts)
    test = draw([spec.test_per_class] * spec.num_classes)
    return train, test


def cross_polytope_spec(num_classes: int = 10, dim: int = 16, imbalance_factor: float = 100.0,
                        max_count: int = 500, *, radius: float = 0.7, signal_std: float = 0.05,
                        nuisance_std: float = 0.5, seed: int = 0,
                        test_per_class: int = 200) -> SyntheticSpec:
    """Long-tailed mixture with class means on the axes of a cross-polytope.

    Classes 0 and 1 (the largest) sit on ``+radius`` along axes 0 and 1; the
    rest fill ``-e0, -e1, +e2, -e2, +e3, ...``.  Every class is then within
    ``radius * sqrt(2)`` of class 0 or 1.  All classes share one diagonal
    covariance: ``signal_std`` on the ``ceil(C/2)`` axes that carry means,
    ``nuisance_std`` on the remaining ones.
    """
    axes = math.ceil(num_classes / 2)
    if axes > dim:
        raise DimensionMismatch(f"{num_classes} classes need at least {axes} dimensions")
    slots = [(0, 1.0), (1, 1.0), (0, -1.0), (1, -1.0)]
    for j in range(2, axes):
        slots += [(j, 1.0), (j, -1.0)]
    if num_classes <= 2:
        slots = [(j, 1.0) for j in range(num_classes)]
    means = np.zeros((num_classes, dim))
    for k, (j, sign) in enumerate(slots[:num_classes]):
        means[k, j] = sign * radius
    var = np.r_[np.full(axes, signal_std**2), np.full(dim - axes, nuisance_std**2)]
    covs = np.broadcast_to(np.diag(var), (num_classes, dim, dim)).copy()
    return SyntheticSpec(num_classes, dim, imbalance_factor, max_count, means, covs,
                         seed=seed, test_per_class=test_per_class)
