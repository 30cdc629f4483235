import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesonet import tensor as T
from mesonet.errors import NumericError, ShapeError


def test_create():
    assert T.create([2, 2], 0.0).tolist() == [[0, 0], [0, 0]]
    assert T.create([1], 7.5).tolist() == [7.5]
    ones = T.create([3, 2, 1, 1], 1.0)
    assert ones.size == 6 and np.all(ones == 1) and ones.dtype == np.float32


@pytest.mark.parametrize("shape", [[0], [2, -1], [], [1, 1, 1, 1, 1]])
def test_create_rejects_bad_shapes(shape):
    with pytest.raises(ShapeError):
        T.create(shape, 0.0)


def test_elementwise():
    a = np.array([1, 2], np.float32)
    b = np.array([3, 4], np.float32)
    assert T.elementwise(a, b, "add").tolist() == [4, 6]
    x = np.random.default_rng(0).random(5).astype(np.float32)
    assert np.all(T.elementwise(x, np.zeros(5, np.float32), "mul") == 0)
    assert T.elementwise(np.array([6.0, 8.0]), np.array([2.0, 4.0]), "div").tolist() == [3, 2]
    with pytest.raises(ShapeError):
        T.elementwise(a, np.ones(3), "sub")
    with pytest.raises(NumericError):
        T.elementwise(a, np.array([1.0, 0.0]), "div")


def _naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i][j] = s
    return np.array(out)


def test_matmul():
    x = np.array([[1, 2], [3, 4]], np.float32)
    assert np.array_equal(T.matmul(np.eye(2, dtype=np.float32), x), x)
    assert T.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])).tolist() == [[11]]
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (5, 7)).astype(np.float32)
    b = rng.uniform(-1, 1, (7, 3)).astype(np.float32)
    assert np.max(np.abs(T.matmul(a, b) - _naive_matmul(a, b))) <= 1e-5
    with pytest.raises(ShapeError):
        T.matmul(a, a)
    with pytest.raises(ShapeError):
        T.matmul(np.ones(3), np.ones((3, 1)))


def test_reduce():
    x = np.array([[1, 2], [3, 4]], np.float32)
    assert T.reduce(x, [0, 1], "sum") == 10
    assert T.reduce(np.array([2.0, 4.0]), [0], "mean") == 3
    assert T.reduce(np.array([[1, 9], [5, 2]]), [1], "max").tolist() == [9, 5]
    assert T.reduce(x, [1], "sum", keepdims=True).shape == (2, 1)
    with pytest.raises(ShapeError):
        T.reduce(x, [0, 0], "sum")
    with pytest.raises(ShapeError):
        T.reduce(x, [2], "sum")


def _scan_argmax(row):
    best = 0
    for i, v in enumerate(row):
        if v > row[best]:
            best = i
    return best


def test_argmax_rows():
    assert T.argmax_rows(np.array([[0.1, 0.9], [0.8, 0.2]])) == [1, 0]
    assert T.argmax_rows(np.array([[0.5, 0.5]])) == [0]
    a = np.random.default_rng(3).random((100, 6))
    assert T.argmax_rows(a) == [_scan_argmax(r) for r in a]
    with pytest.raises(ShapeError):
        T.argmax_rows(np.ones(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matmul_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.uniform(-1, 1, (4, 4)).astype(np.float32) for _ in range(3))
    left = T.matmul(T.matmul(a, b), c)
    right = T.matmul(a, T.matmul(b, c))
    assert np.max(np.abs(left - right)) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
def test_sum_matches_sequential_float64(shape, seed):
    a = np.random.default_rng(seed).uniform(-1, 1, shape).astype(np.float32)
    total = 0.0
    for v in a.ravel():
        total += float(v)
    got = float(T.reduce(a, list(range(a.ndim)), "sum"))
    assert abs(got - total) <= 1e-4 * max(1.0, abs(total))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_argmax_ties_pick_lowest(width, seed):
    rng = np.random.default_rng(seed)
    row = rng.uniform(-1, 0, width)
    i, j = sorted(rng.choice(width, 2, replace=False))
    row[i] = row[j] = 5.0
    assert T.argmax_rows(row[None, :]) == [i]
