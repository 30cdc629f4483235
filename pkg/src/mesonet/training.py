"""Loss, Adam, and the epoch/fit loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .architectures import Model, backward, forward
from .errors import ConfigError, DataError, NumericError, ShapeError, UsageError

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


def _check_onehot(probs: np.ndarray, onehot: np.ndarray) -> None:
    if probs.shape != onehot.shape or probs.ndim != 2:
        raise ShapeError(f"probs {probs.shape} vs targets {onehot.shape}")
    valid = np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)
    if not valid:
        raise UsageError("targets must be one-hot rows")


def categorical_cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    _check_onehot(probs, onehot)
    p_true = np.sum(probs.astype(np.float64) * onehot, axis=1)
    return float(-np.mean(np.log(np.maximum(p_true, LOG_CLAMP))))


def ce_softmax_grad(probs: np.ndarray, onehot: np.ndarray) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. the logits feeding the softmax."""
    _check_onehot(probs, onehot)
    return ((probs - onehot) / probs.shape[0]).astype(probs.dtype, copy=False)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> None:
    """Update ``params`` in place. Nothing is touched if any gradient is non-finite."""
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: grad {g.shape} vs param {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for batch statistics")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] | None = None
    val_acc: list[float] | None = None

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for i in range(len(self)):
                row = [i + 1, f"{self.train_loss[i]:.6f}", f"{self.train_acc[i]:.6f}"]
                if self.val_loss is not None:
                    row += [f"{self.val_loss[i]:.6f}", f"{self.val_acc[i]:.6f}"]
                else:
                    row += ["", ""]
                w.writerow(row)


@dataclass
class ArrayData:
    """A fully decoded dataset: inputs in [0,1] and integer labels."""

    x: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def onehot(self, idx=None) -> np.ndarray:
        labels = self.labels if idx is None else self.labels[idx]
        out = np.zeros((len(labels), self.num_classes), dtype=np.float32)
        out[np.arange(len(labels)), labels] = 1.0
        return out


def _as_arrays(model: Model, data) -> ArrayData:
    if isinstance(data, ArrayData):
        return data
    from .dataset import load_arrays  # dataset imports training types

    return load_arrays(data, size=model.spec.input_size)


def _check_data(model: Model, data: ArrayData) -> None:
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    if data.num_classes != model.spec.num_classes:
        raise DataError(
            f"dataset has {data.num_classes} classes, model head has {model.spec.num_classes}"
        )


def _batches(n: int, batch_size: int) -> list[slice]:
    starts = range(0, n, batch_size)
    out = [slice(s, min(s + batch_size, n)) for s in starts]
    # a trailing batch of one cannot provide batch statistics; merge it
    if len(out) > 1 and out[-1].stop - out[-1].start < 2:
        last = out.pop()
        out[-1] = slice(out[-1].start, last.stop)
    return out


def train_epoch(
    model: Model,
    data,
    config: TrainConfig,
    epoch_index: int,
    state: AdamState | None = None,
) -> EpochMetrics:
    """One pass over ``data`` (a manifest or preloaded ArrayData)."""
    data = _as_arrays(model, data)
    _check_data(model, data)
    if state is None:
        state = AdamState(lr=config.learning_rate)
    n = len(data)
    order = np.arange(n)
    if config.shuffle:
        order = np.random.default_rng([config.seed, epoch_index]).permutation(n)

    params = model.trainable()
    total_loss = 0.0
    correct = 0
    for b, sl in enumerate(_batches(n, config.batch_size)):
        idx = order[sl]
        x = data.x[idx]
        y = data.onehot(idx)
        rng = np.random.default_rng([config.seed, epoch_index, b])
        probs, caches = forward(model, x, L.TRAIN, rng)
        total_loss += categorical_cross_entropy(probs, y) * len(idx)
        correct += int(np.sum(np.argmax(probs, axis=1) == data.labels[idx]))
        grads = backward(model, caches, ce_softmax_grad(probs, y))
        if config.learning_rate > 0:
            adam_step(params, grads, state)
    return EpochMetrics(total_loss / n, correct / n)


def evaluate(model: Model, data, batch_size: int = 32) -> tuple[EpochMetrics, np.ndarray]:
    """Infer-mode loss/accuracy and the stacked class probabilities."""
    data = _as_arrays(model, data)
    probs = predict_proba(model, data.x, batch_size)
    loss = categorical_cross_entropy(probs, data.onehot())
    acc = float(np.mean(np.argmax(probs, axis=1) == data.labels))
    return EpochMetrics(loss, acc), probs


def predict_proba(model: Model, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    chunks = [
        forward(model, x[i : i + batch_size], L.INFER)[0] for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(chunks, axis=0)


def fit(model: Model, train_data, val_data=None, config: TrainConfig | None = None) -> TrainHistory:
    config = config or TrainConfig()
    train_data = _as_arrays(model, train_data)
    _check_data(model, train_data)
    if val_data is not None:
        val_data = _as_arrays(model, val_data)
    state = AdamState(lr=config.learning_rate)
    history = TrainHistory()
    if val_data is not None:
        history.val_loss, history.val_acc = [], []
    for epoch in range(config.epochs):
        m = train_epoch(model, train_data, config, epoch, state)
        history.train_loss.append(m.loss)
        history.train_acc.append(m.accuracy)
        msg = f"epoch {epoch + 1}/{config.epochs} loss={m.loss:.4f} acc={m.accuracy:.4f}"
        if val_data is not None:
            vm, _ = evaluate(model, val_data, config.batch_size)
            history.val_loss.append(vm.loss)
            history.val_acc.append(vm.accuracy)
            msg += f" val_loss={vm.loss:.4f} val_acc={vm.accuracy:.4f}"
        log.info(msg)
    return history
