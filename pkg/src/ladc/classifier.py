"""Linear softmax classifier with decoupled re-balancing modes.

Adjusted logits are ``scale * (W x + b) + shift``.  Which parameters a
training run may touch depends on the mode:

============  ==========================
mode          trainable
============  ==========================
plain, crt    ``weights``, ``bias``
lws           ``scale``
lws_plus      ``scale``, ``shift``
============  ==========================
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, MalformedHeader, NonFiniteLoss

MODES = ("plain", "crt", "lws", "lws_plus")
TRAINABLE = {
    "plain": ("weights", "bias"),
    "crt": ("weights", "bias"),
    "lws": ("scale",),
    "lws_plus": ("scale", "shift"),
}
CKPT_MAGIC = b"LCLF"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIII")


@dataclass(eq=False)
class LinearClassifier:
    weights: np.ndarray
    bias: np.ndarray
    scale: np.ndarray
    shift: np.ndarray
    mode: str = "plain"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown classifier mode {self.mode!r}")
        for name in ("weights", "bias", "scale", "shift"):
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        c = self.weights.shape[0]
        if any(v.shape != (c,) for v in (self.bias, self.scale, self.shift)):
            raise DimensionMismatch("bias/scale/shift must have one entry per weight row")

    @classmethod
    def zeros(cls, num_classes: int, dim: int, mode: str = "plain") -> "LinearClassifier":
        return cls(np.zeros((num_classes, dim)), np.zeros(num_classes),
                   np.ones(num_classes), np.zeros(num_classes), mode)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def copy(self, mode: str | None = None) -> "LinearClassifier":
        return LinearClassifier(self.weights.copy(), self.bias.copy(), self.scale.copy(),
                                self.shift.copy(), self.mode if mode is None else mode)

    def for_stage2(self, mode: str) -> "LinearClassifier":
        """Copy prepared for a Stage-2 run in ``mode``.

        ``crt`` starts again from zero weights; ``lws``/``lws_plus`` keep the
        weights and start from ``scale = 1``, ``shift = 0``.
        """
        if mode == "crt":
            return LinearClassifier.zeros(self.num_classes, self.dim, "crt")
        out = self.copy(mode)
        out.scale[:] = 1.0
        out.shift[:] = 0.0
        return out

    def base_logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"feature has {x.shape[-1]} dims, classifier expects {self.dim}")
        return x @ self.weights.T + self.bias

    def logits(self, x) -> np.ndarray:
        return self.scale * self.base_logits(x) + self.shift

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias, "scale": self.scale, "shift": self.shift}


def logits(classifier: LinearClassifier, feature) -> np.ndarray:
    return classifier.logits(feature)


def predict(classifier: LinearClassifier, feature):
    """Arg-max class; ties go to the lowest index.  Accepts one row or a matrix."""
    z = classifier.logits(feature)
    if z.ndim == 1:
        return int(np.argmax(z))
    return np.argmax(z, axis=1)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grads(clf: LinearClassifier, x, y) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy and its gradient for the mode's trainable parameters."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    phi = clf.base_logits(x)
    z = clf.scale * phi + clf.shift
    logp = _log_softmax(z)
    n = x.shape[0]
    loss = -float(logp[np.arange(n), y].sum()) / n
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    grads = {}
    names = TRAINABLE[clf.mode]
    if "weights" in names:
        dphi = dz * clf.scale
        grads["weights"] = dphi.T @ x
        grads["bias"] = dphi.sum(axis=0)
    if "scale" in names:
        grads["scale"] = (dz * phi).sum(axis=0)
    if "shift" in names:
        grads["shift"] = dz.sum(axis=0)
    return loss, grads


def gradient_check(classifier: LinearClassifier, batch, step: float = 1e-4) -> float:
    """Worst relative gap between analytic and central-difference gradients.

    Per parameter block the gap is ``max|a - n| / max(max|a|, max|n|, 1e-12)``.
    """
    x, y = batch[0], batch[1]
    _, analytic = loss_and_grads(classifier, x, y)
    worst = 0.0
    for name, grad in analytic.items():
        param = getattr(classifier, name)
        numeric = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + step
            up, _ = loss_and_grads(classifier, x, y)
            param[idx] = orig - step
            down, _ = loss_and_grads(classifier, x, y)
            param[idx] = orig
            numeric[idx] = (up - down) / (2 * step)
        denom = max(np.abs(grad).max(), np.abs(numeric).max(), 1e-12)
        worst = max(worst, float(np.abs(grad - numeric).max() / denom))
    return worst


@dataclass
class TrainConfig:
    epochs: int = 30
    base_lr: float = 0.1
    lr_drops: list = field(default_factory=lambda: [(10, 0.1), (20, 0.1)])
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    mode: str = "lws_plus"
    seed: int = 0
    decay_adjustments: bool = False

    def __post_init__(self):
        self.lr_drops = [(int(e), float(f)) for e, f in self.lr_drops]
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.base_lr < 0:
            raise ConfigError("base_lr must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        epochs = [e for e, _ in self.lr_drops]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ConfigError("lr_drops epochs must be strictly increasing")
        if any(not 0 <= e < max(self.epochs, 1) for e in epochs):
            raise ConfigError("lr_drops epochs must lie in [0, epochs)")

    def lr_at(self, epoch: int) -> float:
        lr = self.base_lr
        for e, factor in self.lr_drops:
            if epoch >= e:
                lr *= factor
        return lr


def _epoch_batches(stream):
    if hasattr(stream, "epoch"):
        return stream.epoch()
    return iter(stream)


def train(classifier: LinearClassifier, stream, config: TrainConfig) -> tuple[LinearClassifier, list[float]]:
    """SGD with momentum on softmax cross-entropy.

    ``stream`` is either an object with an ``epoch()`` method yielding batches
    or a re-iterable sequence of ``(features, labels)`` batches.  Returns a
    trained copy and the per-epoch mean loss.
    """
    clf = classifier.copy(config.mode)
    names = TRAINABLE[config.mode]
    velocity = {name: np.zeros_like(getattr(clf, name)) for name in names}
    decayed = {"weights", "bias"} | ({"scale", "shift"} if config.decay_adjustments else set())
    trace = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        total, batches = 0.0, 0
        for batch in _epoch_batches(stream):
            # overflow surfaces as a non-finite loss on the next batch
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grads(clf, batch[0], batch[1])
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"epoch {epoch}: loss became {loss}")
                for name in names:
                    param = getattr(clf, name)
                    g = grads[name]
                    if name in decayed and config.weight_decay:
                        g = g + config.weight_decay * param
                    velocity[name] = config.momentum * velocity[name] + g
                    param -= lr * velocity[name]
            total += loss
            batches += 1
        trace.append(total / max(batches, 1))
    return clf, trace


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(classifier: LinearClassifier, path) -> None:
    c, d = classifier.weights.shape
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, c, d, MODES.index(classifier.mode)))
        for arr in (classifier.weights, classifier.bias, classifier.scale, classifier.shift):
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> LinearClassifier:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise MalformedHeader(f"byte {len(raw)}: checkpoint header truncated")
    magic, version, c, d, tag = _CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise MalformedHeader(f"byte 0: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise MalformedHeader(f"byte 4: unsupported checkpoint version {version}")
    if tag >= len(MODES):
        raise MalformedHeader(f"byte 16: unknown mode tag {tag}")
    expected = _CKPT_HEADER.size + 8 * (c * d + 3 * c)
    if len(raw) != expected:
        raise DimensionMismatch(f"checkpoint is {len(raw)} bytes, header implies {expected}")
    vals = np.frombuffer(raw, dtype="<f8", offset=_CKPT_HEADER.size)
    w = vals[: c * d].reshape(c, d)
    rest = vals[c * d:].reshape(3, c)
    return LinearClassifier(w, rest[0], rest[1], rest[2], MODES[tag])
