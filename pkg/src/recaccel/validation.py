"""Input validation for the estimator API.

Events are encoded as integer rows ``[sequence item ids..., candidate ids...]``
with the label ``y`` giving the positive candidate's position.
"""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .exceptions import DomainError, ShapeError


def check_events(X, n_candidates: int, n_items: int = None) -> tuple:
    """Split ``X`` into ``(seq, cands)`` after type and range checks."""
    X = check_array(X, dtype=np.int64, ensure_2d=True)
    if X.shape[1] <= n_candidates:
        raise ShapeError(f"X needs more than n_candidates={n_candidates} columns, got {X.shape[1]}")
    if X.min() < 0 or (n_items is not None and X.max() >= n_items):
        raise DomainError("item id out of range")
    return X[:, :-n_candidates], X[:, -n_candidates:]


def check_labels(y, n_events: int, n_candidates: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.shape[0] != n_events:
        raise ShapeError(f"y has {y.shape[0]} labels for {n_events} events")
    if y.size and (y.min() < 0 or y.max() >= n_candidates):
        raise DomainError("label outside the candidate range")
    return y
