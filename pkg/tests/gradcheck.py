"""Central finite differences in float64."""

from __future__ import annotations

import numpy as np

H = 1e-5


def numeric_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """d f / d x for scalar ``f``; ``x`` is perturbed in place and restored."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise relative error, with an absolute floor for near-zero entries."""
    num = np.abs(a - b)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(num / den)) if num.size else 0.0


# -- per-layer checks: each builds a random float64 instance and returns the
# worst relative error over every gradient the backward pass produces.

def _loss_weights(rng, shape):
    return rng.standard_normal(shape)


def check_conv(rng, kernel: int) -> float:
    from mesonet import layers as L

    n, cin, cout = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    size = int(rng.integers(kernel, kernel + 2))
    x = rng.standard_normal((n, cin, size, size))
    conv = L.Conv2d(rng.standard_normal((cout, cin, kernel, kernel)), rng.standard_normal(cout))
    y, cache = L.conv2d_forward(conv, x)
    r = _loss_weights(rng, y.shape)
    dx, dw, db = L.conv2d_backward(conv, cache, r)
    f = lambda: float(np.sum(L.conv2d_forward(conv, x)[0] * r))  # noqa: E731
    return max(
        rel_error(dx, numeric_grad(f, x)),
        rel_error(dw, numeric_grad(f, conv.weights)),
        rel_error(db, numeric_grad(f, conv.bias)),
    )


def check_batchnorm(rng) -> float:
    from mesonet import layers as L

    n, c, h, w = (int(v) for v in rng.integers(1, 5, size=4))
    if n * h * w < 2:
        n = 2
    x = rng.standard_normal((n, c, h, w)) * 2 + 0.5
    bn = L.BatchNorm(
        rng.standard_normal(c), rng.standard_normal(c), np.zeros(c), np.ones(c)
    )
    y, cache = L.batchnorm_forward(bn, x, L.TRAIN)
    r = _loss_weights(rng, y.shape)
    dx, dg, db = L.batchnorm_backward(bn, cache, r)
    f = lambda: float(np.sum(L.batchnorm_forward(bn, x, L.TRAIN)[0] * r))  # noqa: E731
    return max(
        rel_error(dx, numeric_grad(f, x)),
        rel_error(dg, numeric_grad(f, bn.gamma)),
        rel_error(db, numeric_grad(f, bn.beta)),
    )


def tie_free_pool_input(rng, shape, pool: int, margin: float = 1e-3) -> np.ndarray:
    """Random input whose pooling windows have a unique max by at least ``margin``."""
    while True:
        x = rng.standard_normal(shape)
        n, c, h, w = shape
        win = x.reshape(n, c, h // pool, pool, w // pool, pool).transpose(0, 1, 2, 4, 3, 5)
        top2 = np.sort(win.reshape(n, c, h // pool, w // pool, -1), axis=-1)[..., -2:]
        if np.all(top2[..., 1] - top2[..., 0] > margin):
            return x


def check_maxpool(rng, pool: int) -> float:
    from mesonet import layers as L

    n, c = (int(v) for v in rng.integers(1, 4, size=2))
    mult = 1 if pool == 4 else int(rng.integers(1, 3))
    shape = (n, c, pool * mult, pool * mult)
    x = tie_free_pool_input(rng, shape, pool)
    layer = L.MaxPool(pool)
    y, cache = L.maxpool_forward(layer, x)
    r = _loss_weights(rng, y.shape)
    dx = L.maxpool_backward(layer, cache, r)
    f = lambda: float(np.sum(L.maxpool_forward(layer, x)[0] * r))  # noqa: E731
    return rel_error(dx, numeric_grad(f, x))


def check_relu(rng) -> float:
    from mesonet import layers as L

    x = rng.standard_normal(int(rng.integers(3, 30)))
    x[np.abs(x) < 1e-2] = 0.5
    y, cache = L.relu(x)
    r = _loss_weights(rng, y.shape)
    dx = L.relu_backward(cache, r)
    f = lambda: float(np.sum(L.relu(x)[0] * r))  # noqa: E731
    return rel_error(dx, numeric_grad(f, x))


def check_dense(rng) -> float:
    from mesonet import layers as L

    n, i, o = (int(v) for v in rng.integers(1, 6, size=3))
    x = rng.standard_normal((n, i))
    d = L.Dense(rng.standard_normal((i, o)), rng.standard_normal(o))
    y, cache = L.dense_forward(d, x)
    r = _loss_weights(rng, y.shape)
    dx, dw, db = L.dense_backward(d, cache, r)
    f = lambda: float(np.sum(L.dense_forward(d, x)[0] * r))  # noqa: E731
    return max(
        rel_error(dx, numeric_grad(f, x)),
        rel_error(dw, numeric_grad(f, d.weights)),
        rel_error(db, numeric_grad(f, d.bias)),
    )


def check_softmax_ce(rng) -> float:
    from mesonet.layers import softmax_rows
    from mesonet.training import categorical_cross_entropy, ce_softmax_grad

    n, c = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    z = rng.standard_normal((n, c)) * 2
    onehot = np.eye(c)[rng.integers(0, c, n)]
    dz = ce_softmax_grad(softmax_rows(z), onehot)
    f = lambda: categorical_cross_entropy(softmax_rows(z), onehot)  # noqa: E731
    return rel_error(dz, numeric_grad(f, z))


GRAD_CHECKS = {
    "conv3x3": lambda rng: check_conv(rng, 3),
    "conv5x5": lambda rng: check_conv(rng, 5),
    "batchnorm": check_batchnorm,
    "maxpool2": lambda rng: check_maxpool(rng, 2),
    "maxpool4": lambda rng: check_maxpool(rng, 4),
    "relu": check_relu,
    "dense": check_dense,
    "softmax_ce": check_softmax_ce,
}
