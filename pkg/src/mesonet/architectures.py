"""Meso architecture specs, parameter initialisation, and the full network pass."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import layers as L
from .errors import ConfigError, ShapeError

BINARY_CLASSES = ("DeepFake", "Real")
MULTI_CLASSES = ("DeepFake", "FaceSwap", "Real")

ARCH_NAMES = ("meso4", "mesonet-plus", "meso-multinet", "meso-multinet-plus")


@dataclass(frozen=True)
class ConvBlockSpec:
    filters: int
    kernel: int
    pool: int

    def __post_init__(self):
        if self.filters not in (8, 16, 32):
            raise ConfigError(f"filters must be 8, 16 or 32, got {self.filters}")
        if self.kernel not in (3, 5):
            raise ConfigError(f"kernel must be 3 or 5, got {self.kernel}")
        if self.pool not in (2, 4):
            raise ConfigError(f"pool must be 2 or 4, got {self.pool}")


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    blocks: tuple[ConvBlockSpec, ...]
    num_classes: int
    class_names: tuple[str, ...]
    input_size: int = 256
    in_channels: int = 3
    dense_hidden: int = 16
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.num_classes != len(self.class_names):
            raise ConfigError("num_classes must equal the number of class names")
        if len(set(self.class_names)) != len(self.class_names):
            raise ConfigError(f"duplicate class names in {self.class_names}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        total_pool = int(np.prod([b.pool for b in self.blocks]))
        if self.input_size % total_pool:
            raise ConfigError(
                f"pool product {total_pool} does not divide input size {self.input_size}"
            )

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.input_size, self.input_size)

    def spatial_chain(self) -> list[int]:
        sizes = [self.input_size]
        for b in self.blocks:
            sizes.append(sizes[-1] // b.pool)
        return sizes

    @property
    def flatten_size(self) -> int:
        return self.blocks[-1].filters * self.spatial_chain()[-1] ** 2

    def with_input_size(self, size: int) -> "ArchitectureSpec":
        """Same block list on a smaller (or larger) square input."""
        return replace(self, input_size=size)


def _check_classes(num_classes: int, class_names) -> tuple[str, ...]:
    if num_classes not in (2, 3):
        raise ConfigError(f"only 2- or 3-class heads are supported, got {num_classes}")
    if class_names is None:
        class_names = BINARY_CLASSES if num_classes == 2 else MULTI_CLASSES
    class_names = tuple(class_names)
    if len(class_names) != num_classes:
        raise ConfigError(f"{num_classes} classes but names {class_names}")
    return class_names


def spec_meso4(num_classes: int = 2, class_names=None) -> ArchitectureSpec:
    names = _check_classes(num_classes, class_names)
    blocks = (
        ConvBlockSpec(8, 3, 2),
        ConvBlockSpec(8, 5, 2),
        ConvBlockSpec(16, 3, 2),
        ConvBlockSpec(16, 3, 4),
    )
    name = "meso4" if num_classes == 2 else "meso-multinet"
    return ArchitectureSpec(name, blocks, num_classes, names)


def spec_meso_plus6(num_classes: int = 2, class_names=None) -> ArchitectureSpec:
    names = _check_classes(num_classes, class_names)
    blocks = (
        ConvBlockSpec(8, 3, 2),
        ConvBlockSpec(8, 5, 2),
        ConvBlockSpec(16, 5, 2),
        ConvBlockSpec(16, 3, 2),
        ConvBlockSpec(32, 3, 2),
        ConvBlockSpec(32, 3, 2),
    )
    name = "mesonet-plus" if num_classes == 2 else "meso-multinet-plus"
    return ArchitectureSpec(name, blocks, num_classes, names)


def spec_by_name(arch: str, class_names=None) -> ArchitectureSpec:
    """Resolve one of the four public architecture names."""
    if arch not in ARCH_NAMES:
        raise ConfigError(f"unknown architecture {arch!r}; choose from {', '.join(ARCH_NAMES)}")
    num_classes = 2 if arch in ("meso4", "mesonet-plus") else 3
    if class_names is not None and len(class_names) != num_classes:
        raise ConfigError(
            f"{arch} has a {num_classes}-class head but {len(class_names)} classes were given"
        )
    factory = spec_meso4 if arch in ("meso4", "meso-multinet") else spec_meso_plus6
    spec = factory(num_classes, class_names)
    return replace(spec, name=arch)


@dataclass
class Block:
    conv: L.Conv2d
    bn: L.BatchNorm
    pool: L.MaxPool


@dataclass
class Model:
    spec: ArchitectureSpec
    blocks: list[Block]
    hidden: L.Dense
    head: L.Dense
    seed: int = 0
    dropout: L.Dropout = field(init=False)

    def __post_init__(self):
        self.dropout = L.Dropout(self.spec.dropout_rate)
        if self.hidden.weights.shape[0] != self.spec.flatten_size:
            raise ShapeError(
                f"hidden dense expects {self.hidden.weights.shape[0]} inputs, "
                f"flatten is {self.spec.flatten_size}"
            )

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.spec.class_names

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every stored array in a fixed order, BN running stats included."""
        for i, b in enumerate(self.blocks):
            yield f"block{i}.conv.weights", b.conv.weights
            yield f"block{i}.conv.bias", b.conv.bias
            yield f"block{i}.bn.gamma", b.bn.gamma
            yield f"block{i}.bn.beta", b.bn.beta
            yield f"block{i}.bn.running_mean", b.bn.running_mean
            yield f"block{i}.bn.running_var", b.bn.running_var
        yield "hidden.weights", self.hidden.weights
        yield "hidden.bias", self.hidden.bias
        yield "head.weights", self.head.weights
        yield "head.bias", self.head.bias

    def trainable(self) -> dict[str, np.ndarray]:
        return {
            k: v for k, v in self.named_tensors() if "running_" not in k
        }

    def parameter_count(self) -> int:
        return sum(v.size for _, v in self.named_tensors())

    def astype(self, dtype) -> "Model":
        """Deep copy with every array cast to ``dtype``."""
        blocks = [
            Block(
                L.Conv2d(b.conv.weights.astype(dtype), b.conv.bias.astype(dtype)),
                L.BatchNorm(
                    b.bn.gamma.astype(dtype),
                    b.bn.beta.astype(dtype),
                    b.bn.running_mean.astype(dtype),
                    b.bn.running_var.astype(dtype),
                    b.bn.epsilon,
                    b.bn.momentum,
                ),
                b.pool,
            )
            for b in self.blocks
        ]
        return Model(
            self.spec,
            blocks,
            L.Dense(self.hidden.weights.astype(dtype), self.hidden.bias.astype(dtype)),
            L.Dense(self.head.weights.astype(dtype), self.head.bias.astype(dtype)),
            self.seed,
        )

    def copy(self) -> "Model":
        return self.astype(self.blocks[0].conv.weights.dtype)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def build(spec: ArchitectureSpec, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    blocks = []
    cin = spec.in_channels
    for bs in spec.blocks:
        k = bs.kernel
        w = _he_uniform(rng, (bs.filters, cin, k, k), cin * k * k)
        blocks.append(
            Block(
                L.Conv2d(w, np.zeros(bs.filters, np.float32)),
                L.BatchNorm.identity(bs.filters),
                L.MaxPool(bs.pool),
            )
        )
        cin = bs.filters
    flat, hid = spec.flatten_size, spec.dense_hidden
    hidden = L.Dense(_he_uniform(rng, (flat, hid), flat), np.zeros(hid, np.float32))
    head = L.Dense(
        _he_uniform(rng, (hid, spec.num_classes), hid),
        np.zeros(spec.num_classes, np.float32),
    )
    return Model(spec, blocks, hidden, head, seed)


@dataclass
class ForwardCaches:
    blocks: list[tuple[L.LayerCache, L.LayerCache, L.LayerCache, L.LayerCache]]
    flat_shape: tuple[int, ...]
    drop1: L.LayerCache
    hidden: L.LayerCache
    relu: L.LayerCache
    drop2: L.LayerCache
    head: L.LayerCache
    logits: np.ndarray
    shapes: list[tuple[int, ...]]


def forward(
    model: Model,
    x: np.ndarray,
    mode: str = L.INFER,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCaches]:
    """Run the network and return ``(probabilities, caches)``.

    Train mode updates BN running statistics and draws dropout masks from
    ``rng``; infer mode touches no state.
    """
    spec = model.spec
    expected = spec.input_shape
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeError(f"{spec.name} expects [N,{','.join(map(str, expected))}], got {x.shape}")
    if mode == L.TRAIN and rng is None and spec.dropout_rate > 0:
        rng = np.random.default_rng(model.seed)

    h = x
    shapes = [x.shape]
    block_caches = []
    for blk in model.blocks:
        h, c_conv = L.conv2d_forward(blk.conv, h)
        h, c_relu = L.relu(h)
        h, c_bn = L.batchnorm_forward(blk.bn, h, mode)
        h, c_pool = L.maxpool_forward(blk.pool, h)
        block_caches.append((c_conv, c_relu, c_bn, c_pool))
        shapes.append(h.shape)

    flat_shape = h.shape
    h = h.reshape(h.shape[0], -1)
    h, c_d1 = L.dropout_forward(model.dropout, h, mode, rng)
    h, c_hidden = L.dense_forward(model.hidden, h)
    h, c_relu = L.relu(h)
    h, c_d2 = L.dropout_forward(model.dropout, h, mode, rng)
    logits, c_head = L.dense_forward(model.head, h)
    probs = L.softmax_rows(logits)
    caches = ForwardCaches(
        block_caches, flat_shape, c_d1, c_hidden, c_relu, c_d2, c_head, logits, shapes
    )
    return probs, caches


def logits(model: Model, x: np.ndarray) -> np.ndarray:
    """Pre-softmax outputs in infer mode."""
    return forward(model, x, L.INFER)[1].logits


def backward(model: Model, caches: ForwardCaches, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every trainable tensor, keyed like ``Model.trainable``."""
    grads: dict[str, np.ndarray] = {}
    dh, grads["head.weights"], grads["head.bias"] = L.dense_backward(
        model.head, caches.head, dlogits
    )
    dh = L.dropout_backward(caches.drop2, dh)
    dh = L.relu_backward(caches.relu, dh)
    dh, grads["hidden.weights"], grads["hidden.bias"] = L.dense_backward(
        model.hidden, caches.hidden, dh
    )
    dh = L.dropout_backward(caches.drop1, dh)
    dh = dh.reshape(caches.flat_shape)
    for i in reversed(range(len(model.blocks))):
        blk = model.blocks[i]
        c_conv, c_relu, c_bn, c_pool = caches.blocks[i]
        dh = L.maxpool_backward(blk.pool, c_pool, dh)
        dh, grads[f"block{i}.bn.gamma"], grads[f"block{i}.bn.beta"] = L.batchnorm_backward(
            blk.bn, c_bn, dh
        )
        dh = L.relu_backward(c_relu, dh)
        dh, grads[f"block{i}.conv.weights"], grads[f"block{i}.conv.bias"] = L.conv2d_backward(
            blk.conv, c_conv, dh, need_dx=i > 0
        )
    return grads
