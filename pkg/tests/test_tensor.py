import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from recaccel.exceptions import DomainError, NumericError, ShapeError
from recaccel.tensor import (
    as_matrix, finite_difference_grad_check, kl_divergence_rows, matmul, relu, softmax_rows,
)


def test_matmul_hand_cases():
    assert np.array_equal(matmul([[1, 0], [0, 1]], [[3, 4], [5, 6]]), [[3, 4], [5, 6]])
    assert np.array_equal(matmul([[1, 2]], [[3], [4]]), [[11]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    ref = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.allclose(matmul(a, b), ref, atol=1e-12, rtol=0)


def test_matmul_rejects_bad_shapes_and_nonfinite():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        matmul(np.ones(3), np.ones((3, 1)))
    with pytest.raises(NumericError):
        matmul([[np.nan]], [[1.0]])


def test_softmax_examples():
    assert np.allclose(softmax_rows([[0, 0]]), [[0.5, 0.5]])
    out = softmax_rows([[1000, 1000]])
    assert np.all(np.isfinite(out)) and np.allclose(out, [[0.5, 0.5]])
    assert np.allclose(softmax_rows([[math.log(1), math.log(3)]]), [[0.25, 0.75]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-500, 500)))
def test_softmax_rows_are_distributions(x):
    p = softmax_rows(x)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0)


def test_kl_examples():
    p = np.array([[0.2, 0.3, 0.5]])
    assert kl_divergence_rows(p, p) == 0.0
    assert kl_divergence_rows([[0.5, 0.5]], [[0.25, 0.75]]) == pytest.approx(
        0.5 * math.log(2) - 0.5 * math.log(1.5), abs=1e-12)
    assert kl_divergence_rows([[0.5, 0.5]], [[0.25, 0.75]]) == pytest.approx(0.1438, abs=1e-3)
    assert kl_divergence_rows([[1.0, 0.0]], [[1.0, 0.0]]) == 0.0


def test_kl_rejects_non_distributions():
    with pytest.raises(DomainError):
        kl_divergence_rows([[0.5, 0.6]], [[0.5, 0.5]])
    with pytest.raises(ShapeError):
        kl_divergence_rows([[0.5, 0.5]], [[1.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(4), size=3)
    q = rng.dirichlet(np.ones(4), size=3)
    assert kl_divergence_rows(p, q) >= -1e-15


def test_relu():
    assert np.array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])


def test_grad_check_quadratic_and_constant():
    r = finite_difference_grad_check(lambda w: float(np.sum(w ** 2)), [1.0, 2.0], [2.0, 4.0],
                                     epsilon=1e-4)
    assert r.max_rel_error < 1e-5
    r = finite_difference_grad_check(lambda w: 3.0, [1.0, 2.0], [0.0, 0.0])
    assert r.max_rel_error == 0.0


def test_grad_check_flags_wrong_gradient():
    r = finite_difference_grad_check(lambda w: float(np.sum(w ** 2)), [1.0, 2.0], [2.0, 0.0])
    assert r.max_rel_error > 0.5 and r.param_index_worst == 1


def test_grad_check_errors():
    with pytest.raises(DomainError):
        finite_difference_grad_check(lambda w: 0.0, [1.0], [0.0], epsilon=0)
    with pytest.raises(ShapeError):
        finite_difference_grad_check(lambda w: 0.0, [1.0, 2.0], [0.0])


def test_as_matrix():
    assert as_matrix([[1, 2]]).dtype == np.float64
    with pytest.raises(ShapeError):
        as_matrix([1, 2])
    with pytest.raises(NumericError):
        as_matrix([[np.inf]])
