"""Grouped accuracy, Gaussian distribution gaps, and 2-D projection exports."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, LengthMismatch, NotPositiveDefinite
from .stats import make_rng

ORIGINS = ("real", "synthetic", "test")


@dataclass(frozen=True)
class GroupThresholds:
    """Many-shot means count > ``many``; few-shot means count < ``few``."""

    many: int = 100
    few: int = 20

    def group_of(self, count: int) -> str:
        if count > self.many:
            return "many"
        if count < self.few:
            return "few"
        return "medium"


@dataclass(frozen=True)
class GroupedAccuracy:
    overall: float | None
    many: float | None
    medium: float | None
    few: float | None
    group_sizes: tuple[int, int, int]

    def as_dict(self) -> dict:
        return {
            "overall": self.overall,
            "many": self.many,
            "medium": self.medium,
            "few": self.few,
            "group_sizes": {"many": self.group_sizes[0], "medium": self.group_sizes[1],
                            "few": self.group_sizes[2]},
        }


def class_groups(train_counts, thresholds: GroupThresholds = GroupThresholds()) -> list[str]:
    return [thresholds.group_of(int(n)) for n in train_counts]


def grouped_accuracy(predictions, truths, train_counts,
                     thresholds: GroupThresholds = GroupThresholds()) -> GroupedAccuracy:
    pred = np.asarray(predictions)
    truth = np.asarray(truths)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {truth.size} truths")
    groups = np.array(class_groups(train_counts, thresholds))
    correct = pred == truth
    g = groups[truth] if truth.size else np.array([], dtype=str)

    def acc(mask):
        n = int(mask.sum())
        return (float(correct[mask].sum()) / n if n else None), n

    many, n_many = acc(g == "many")
    medium, n_med = acc(g == "medium")
    few, n_few = acc(g == "few")
    overall = float(correct.mean()) if correct.size else None
    return GroupedAccuracy(overall, many, medium, few, (n_many, n_med, n_few))


def per_class_accuracy(predictions, truths, num_classes: int) -> list[float | None]:
    pred = np.asarray(predictions)
    truth = np.asarray(truths)
    out = []
    for c in range(num_classes):
        mask = truth == c
        out.append(float((pred[mask] == c).mean()) if mask.any() else None)
    return out


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((a + a.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def _check_psd(cov: np.ndarray, which: str) -> None:
    scale = max(1.0, float(np.abs(cov).max()))
    vals = np.linalg.eigvalsh((cov + cov.T) / 2)
    if vals.min() < -1e-8 * scale:
        raise NotPositiveDefinite(f"{which} covariance has eigenvalue {vals.min():.3g}")


def distribution_gap(estimated, truth) -> float:
    """Squared 2-Wasserstein distance between two Gaussians given as ``(mean, cov)``."""
    m1, s1 = (np.asarray(v, dtype=np.float64) for v in estimated)
    m2, s2 = (np.asarray(v, dtype=np.float64) for v in truth)
    s1, s2 = np.atleast_2d(s1), np.atleast_2d(s2)
    m1, m2 = np.atleast_1d(m1), np.atleast_1d(m2)
    if m1.shape != m2.shape or s1.shape != s2.shape or s1.shape != (m1.size, m1.size):
        raise DimensionMismatch("mean/covariance shapes disagree")
    _check_psd(s1, "estimated")
    _check_psd(s2, "true")
    r2 = sqrtm_psd(s2)
    cross = sqrtm_psd(r2 @ s1 @ r2)
    gap = float(((m1 - m2) ** 2).sum() + np.trace(s1) + np.trace(s2) - 2 * np.trace(cross))
    return max(gap, 0.0)


# -- 2-D projections ---------------------------------------------------------

@dataclass(eq=False)
class ScatterExport:
    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    origins: list[str]
    projection: np.ndarray

    def __len__(self):
        return self.x.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "label", "origin"])
            for x, y, lab, org in zip(self.x, self.y, self.labels, self.origins):
                w.writerow([repr(float(x)), repr(float(y)), int(lab), org])

    def to_svg(self, path, **kwargs) -> None:
        from .svg import scatter_svg

        Path(path).write_text(scatter_svg(self, **kwargs))


def fit_projection(features, labels, num_classes: int, *, epochs: int = 200, lr: float = 0.1,
                   seed=0) -> np.ndarray:
    """Train a ``D -> 2 -> C`` linear bottleneck classifier and return the 2xD layer.

    Full-batch gradient descent on softmax cross-entropy; features are used
    as-is so the same matrix can be applied to every split.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    n, d = x.shape
    rng = make_rng(seed)
    proj = rng.standard_normal((2, d)) / np.sqrt(d)
    head = rng.standard_normal((num_classes, 2)) / np.sqrt(2)
    bias = np.zeros(num_classes)
    onehot = np.eye(num_classes)[y]
    for _ in range(epochs):
        h = x @ proj.T
        z = h @ head.T + bias
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        dz = (p - onehot) / n
        g_head = dz.T @ h
        g_bias = dz.sum(axis=0)
        g_proj = (dz @ head).T @ x
        head -= lr * g_head
        bias -= lr * g_bias
        proj -= lr * g_proj
    return proj


def project_2d(features, labels, origins, projection) -> ScatterExport:
    """Map every feature through the same 2xD matrix.

    ``projection="fit"`` first fits a bottleneck projection on these very
    features and labels (see :func:`fit_projection`).
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if isinstance(projection, str):
        if projection != "fit":
            raise ValueError(f"projection must be a 2xD matrix or 'fit', got {projection!r}")
        x = x.reshape(labels.size, -1)
        projection = fit_projection(x, labels, int(labels.max()) + 1 if labels.size else 1)
    p = np.asarray(projection, dtype=np.float64)
    if x.ndim != 2:
        x = x.reshape(-1, p.shape[1] if p.ndim == 2 else 1)
    if p.shape != (2, x.shape[1]):
        raise DimensionMismatch(f"projection {p.shape} does not map {x.shape[1]}-D features to 2-D")
    origins = [origins] * x.shape[0] if isinstance(origins, str) else list(origins)
    if labels.size != x.shape[0] or len(origins) != x.shape[0]:
        raise LengthMismatch("features, labels and origins differ in length")
    bad = set(origins) - set(ORIGINS)
    if bad:
        raise ValueError(f"unknown origin(s) {sorted(bad)}")
    pts = x @ p.T
    return ScatterExport(pts[:, 0].copy(), pts[:, 1].copy(), labels, origins, p)


def concat_exports(*parts: ScatterExport) -> ScatterExport:
    return ScatterExport(
        np.concatenate([p.x for p in parts]),
        np.concatenate([p.y for p in parts]),
        np.concatenate([p.labels for p in parts]),
        [o for p in parts for o in p.origins],
        parts[0].projection,
    )
