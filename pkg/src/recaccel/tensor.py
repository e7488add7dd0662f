"""Small deterministic numeric kernels.

Every 2-D value in the package is a float64 ``numpy.ndarray`` (rows x cols,
C order).  The helpers here refuse to broadcast: a shape mismatch is always an
error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import DomainError, NumericError, ShapeError

KL_EPS = 1e-12


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Return ``x`` as a finite float64 2-D array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul overflowed")
    return out


def softmax_rows(x) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    x = as_matrix(x)
    return _softmax_lastaxis(x)


def _softmax_lastaxis(x: np.ndarray) -> np.ndarray:
    # -inf entries (masked positions) end up as exact zeros.
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def check_distribution_rows(p: np.ndarray, name: str, tol: float = 1e-6) -> None:
    if np.any(p < 0):
        raise DomainError(f"{name} has negative probabilities")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise DomainError(f"rows of {name} do not sum to 1 (worst {sums.flat[np.argmax(np.abs(sums - 1))]})")


def kl_divergence_rows(p, q) -> float:
    """Mean over rows of KL(p_row || q_row), natural log.

    Zero-probability terms of ``p`` contribute nothing; ``q`` is floored at
    ``KL_EPS``.
    """
    p = as_matrix(p, "p")
    q = as_matrix(q, "q")
    if p.shape != q.shape:
        raise ShapeError(f"p {p.shape} and q {q.shape} differ")
    check_distribution_rows(p, "p")
    check_distribution_rows(q, "q")
    return float(np.mean(_kl_terms(p, q).sum(axis=-1)))


def _kl_terms(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    qf = np.maximum(q, KL_EPS)
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * (np.log(p[nz]) - np.log(qf[nz]))
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    param_index_worst: int


def finite_difference_grad_check(
    loss_fn: Callable[[np.ndarray], float],
    params,
    analytic_grad,
    epsilon: float = 1e-5,
    floor: float = 1e-7,
) -> GradCheckResult:
    """Compare ``analytic_grad`` against central differences of ``loss_fn``.

    The relative error of entry ``i`` is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps near-zero gradients from inflating the ratio.
    ``params`` is not modified.
    """
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    params = np.array(params, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != params.shape:
        raise ShapeError(f"gradient {analytic.shape} does not match params {params.shape}")
    flat = params.reshape(-1)
    grad = analytic.reshape(-1)
    worst, worst_idx = 0.0, 0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        plus = loss_fn(params)
        flat[i] = orig - epsilon
        minus = loss_fn(params)
        flat[i] = orig
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericError(f"loss is non-finite near parameter {i}")
        numeric = (plus - minus) / (2 * epsilon)
        err = abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), floor)
        if err > worst:
            worst, worst_idx = err, i
    return GradCheckResult(max_rel_error=float(worst), param_index_worst=int(worst_idx))
