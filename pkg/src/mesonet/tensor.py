"""Thin, validated array primitives on top of numpy.

Every value in the engine is a plain ``numpy.ndarray``. Storage is float32 in
NCHW order; the gradient-check harness feeds float64 arrays through the same
code paths, so nothing here forces a dtype on inputs that already have one.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import NumericError, ShapeError

DTYPE = np.float32
MAX_RANK = 4

_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape or len(shape) > MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got shape {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def create(shape: Sequence[int], fill: float = 0.0, dtype=DTYPE) -> np.ndarray:
    return np.full(_check_shape(shape), fill, dtype=dtype)


def _finite_or_raise(out: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{what} produced a non-finite value")
    return out


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown op {op!r}")
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if op == "div" and np.any(b == 0):
        raise NumericError("division by zero")
    return _finite_or_raise(_ELEMENTWISE[op](a, b), op)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def reduce(
    a: np.ndarray, axes: Sequence[int], op: str = "sum", keepdims: bool = False
) -> np.ndarray:
    a = np.asarray(a)
    norm = []
    for ax in axes:
        if not -a.ndim <= ax < a.ndim:
            raise ShapeError(f"axis {ax} out of range for rank {a.ndim}")
        norm.append(ax % a.ndim)
    if len(set(norm)) != len(norm):
        raise ShapeError(f"duplicate axes {list(axes)}")
    fn = {"sum": np.sum, "mean": np.mean, "max": np.max}.get(op)
    if fn is None:
        raise ValueError(f"unknown reduction {op!r}")
    return fn(a, axis=tuple(norm), keepdims=keepdims)


def argmax_rows(a: np.ndarray) -> list[int]:
    """Row-wise argmax; numpy already returns the first maximal index on ties."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"argmax_rows needs rank 2, got {a.shape}")
    return [int(i) for i in np.argmax(a, axis=1)]
