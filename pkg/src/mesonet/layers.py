"""Forward and backward kernels for the layers used by the Meso networks.

Each ``*_forward`` returns ``(output, cache)`` and the matching ``*_backward``
consumes that cache. Kernels keep the dtype of their inputs, so float64
parameters and activations give a float64 pass for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConfigError,
    DegenerateBatchError,
    NumericError,
    ShapeError,
    UsageError,
)

TRAIN = "train"
INFER = "infer"


@dataclass
class LayerCache:
    kind: str
    data: dict[str, Any] = field(default_factory=dict)

    def expect(self, kind: str) -> dict[str, Any]:
        if self.kind != kind:
            raise ShapeError(f"{kind} backward received a {self.kind} cache")
        return self.data


def _check_mode(mode: str) -> None:
    if mode not in (TRAIN, INFER):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")


def _check_dy(dy: np.ndarray, shape: tuple[int, ...], kind: str) -> None:
    if dy.shape != shape:
        raise ShapeError(f"{kind}: upstream gradient {dy.shape} != forward output {shape}")


# -- convolution -------------------------------------------------------------


@dataclass
class Conv2d:
    """Stride-1 convolution with zero "same" padding."""

    weights: np.ndarray  # [Cout, Cin, K, K]
    bias: np.ndarray  # [Cout]

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"conv weights must be [Cout,Cin,K,K], got {self.weights.shape}")
        if self.kernel not in (3, 5):
            raise ConfigError(f"kernel must be 3 or 5, got {self.kernel}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("conv bias length must equal Cout")

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]


def _im2col(xpad: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    n, c = xpad.shape[:2]
    win = sliding_window_view(xpad, (k, k), axis=(2, 3))  # N,C,H,W,k,k
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def conv2d_forward(layer: Conv2d, x: np.ndarray) -> tuple[np.ndarray, LayerCache]:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if c != layer.in_channels:
        raise ShapeError(f"conv expects {layer.in_channels} channels, got {c}")
    # zero "same" padding is well defined even when the map is smaller than the kernel
    k = layer.kernel
    p = k // 2
    xpad = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    col = _im2col(xpad, k, h, w)
    wmat = layer.weights.reshape(layer.out_channels, -1)
    out = col @ wmat.T + layer.bias
    y = out.reshape(n, h, w, layer.out_channels).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), LayerCache("conv", {"col": col, "x_shape": x.shape})


def conv2d_backward(
    layer: Conv2d, cache: LayerCache, dy: np.ndarray, need_dx: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients w.r.t. input, weights and bias.

    With stride 1 and odd "same" padding, the input gradient is itself a same
    convolution of ``dy`` with the flipped, channel-transposed kernel.
    ``need_dx=False`` skips it (first layer of a network).
    """
    data = cache.expect("conv")
    n, c, h, w = data["x_shape"]
    cout = layer.out_channels
    _check_dy(dy, (n, cout, h, w), "conv")

    dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (dy2.T @ data["col"]).reshape(layer.weights.shape)
    db = dy2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    flipped = np.ascontiguousarray(layer.weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    dx, _ = conv2d_forward(Conv2d(flipped, np.zeros(c, dtype=flipped.dtype)), dy)
    return dx, dw, db


# -- batch normalization -----------------------------------------------------


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-3
    momentum: float = 0.99

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "BatchNorm":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
        )


def batchnorm_forward(
    layer: BatchNorm, x: np.ndarray, mode: str
) -> tuple[np.ndarray, LayerCache]:
    _check_mode(mode)
    if x.ndim != 4 or x.shape[1] != layer.gamma.shape[0]:
        raise ShapeError(f"batchnorm over {layer.gamma.shape[0]} channels got {x.shape}")
    g = layer.gamma[None, :, None, None]
    b = layer.beta[None, :, None, None]
    if mode == INFER:
        inv_std = 1.0 / np.sqrt(layer.running_var + layer.epsilon)
        xhat = (x - layer.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        return (g * xhat + b).astype(x.dtype, copy=False), LayerCache("bn", {"mode": INFER})

    count = x.shape[0] * x.shape[2] * x.shape[3]
    if count < 2:
        raise DegenerateBatchError("train-mode batchnorm needs N*H*W >= 2 per channel")
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    y = g * xhat + b

    m = layer.momentum
    dt = layer.running_mean.dtype
    layer.running_mean[...] = (m * layer.running_mean + (1 - m) * mu).astype(dt)
    layer.running_var[...] = (m * layer.running_var + (1 - m) * var).astype(dt)
    cache = {"mode": TRAIN, "xhat": xhat, "inv_std": inv_std, "mean": mu, "var": var}
    return y, LayerCache("bn", cache)


def batchnorm_backward(
    layer: BatchNorm, cache: LayerCache, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = cache.expect("bn")
    if data["mode"] != TRAIN:
        raise UsageError("batchnorm backward requires a train-mode cache")
    xhat, inv_std = data["xhat"], data["inv_std"]
    _check_dy(dy, xhat.shape, "batchnorm")
    count = dy.shape[0] * dy.shape[2] * dy.shape[3]

    dbeta = dy.sum(axis=(0, 2, 3))
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dxhat = dy * layer.gamma[None, :, None, None]
    s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    dx = (inv_std[None, :, None, None] / count) * (count * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


# -- max pooling ---------------------------------------------------------------


@dataclass(frozen=True)
class MaxPool:
    pool: int

    def __post_init__(self):
        if self.pool < 1:
            raise ConfigError("pool extent must be >= 1")


def maxpool_forward(layer: MaxPool, x: np.ndarray) -> tuple[np.ndarray, LayerCache]:
    if x.ndim != 4:
        raise ShapeError(f"maxpool input must be NCHW, got {x.shape}")
    n, c, h, w = x.shape
    p = layer.pool
    if h % p or w % p:
        raise ShapeError(f"{h}x{w} is not divisible by pool {p}")
    ho, wo = h // p, w // p
    win = x.reshape(n, c, ho, p, wo, p).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, p * p)
    idx = np.argmax(win, axis=-1)  # first (row-major) maximum wins
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, LayerCache("pool", {"idx": idx, "x_shape": x.shape})


def maxpool_backward(layer: MaxPool, cache: LayerCache, dy: np.ndarray) -> np.ndarray:
    data = cache.expect("pool")
    idx = data["idx"]
    n, c, h, w = data["x_shape"]
    _check_dy(dy, idx.shape, "maxpool")
    p = layer.pool
    dwin = np.zeros(idx.shape + (p * p,), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    dx = dwin.reshape(n, c, h // p, w // p, p, p).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(n, c, h, w))


# -- activations -----------------------------------------------------------------


def relu(x: np.ndarray) -> tuple[np.ndarray, LayerCache]:
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), LayerCache("relu", {"mask": mask})


def relu_backward(cache: LayerCache, dy: np.ndarray) -> np.ndarray:
    mask = cache.expect("relu")["mask"]
    _check_dy(dy, mask.shape, "relu")
    return np.where(mask, dy, 0).astype(dy.dtype, copy=False)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    if z.ndim != 2:
        raise ShapeError(f"softmax expects [N,C], got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input contains NaN or Inf")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# -- dense -------------------------------------------------------------------------


@dataclass
class Dense:
    weights: np.ndarray  # [In, Out]
    bias: np.ndarray  # [Out]

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"dense weights {self.weights.shape} / bias {self.bias.shape}")


def dense_forward(layer: Dense, x: np.ndarray) -> tuple[np.ndarray, LayerCache]:
    if x.ndim != 2 or x.shape[1] != layer.weights.shape[0]:
        raise ShapeError(f"dense expects [N,{layer.weights.shape[0]}], got {x.shape}")
    return x @ layer.weights + layer.bias, LayerCache("dense", {"x": x})


def dense_backward(
    layer: Dense, cache: LayerCache, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = cache.expect("dense")["x"]
    _check_dy(dy, (x.shape[0], layer.weights.shape[1]), "dense")
    return dy @ layer.weights.T, x.T @ dy, dy.sum(axis=0)


# -- dropout -----------------------------------------------------------------------


@dataclass
class Dropout:
    rate: float = 0.5
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")


def dropout_forward(
    layer: Dropout, x: np.ndarray, mode: str, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, LayerCache]:
    _check_mode(mode)
    if not 0.0 <= layer.rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {layer.rate}")
    if mode == INFER:
        return x, LayerCache("dropout", {"mask": None})
    if layer.rate == 0.0:
        mask = np.ones(x.shape, dtype=x.dtype)
    else:
        rng = rng if rng is not None else layer.rng
        if rng is None:
            raise UsageError("train-mode dropout needs a seeded generator")
        keep = 1.0 - layer.rate
        mask = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
    return x * mask, LayerCache("dropout", {"mask": mask})


def dropout_backward(cache: LayerCache, dy: np.ndarray) -> np.ndarray:
    mask = cache.expect("dropout")["mask"]
    if mask is None:
        return dy
    _check_dy(dy, mask.shape, "dropout")
    return dy * mask
