"""Single-positive ranking metrics: HitRate@K, NDCG@K and MRR."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError, DomainError


@dataclass(frozen=True)
class EvalResult:
    hit_rate_at_k: float
    ndcg_at_k: float
    mrr: float
    k: int

    def to_dict(self) -> dict:
        return asdict(self)


def positive_ranks(scores, pos) -> np.ndarray:
    """1-based rank of the positive under descending scores.

    Ties go to the lower candidate index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(pos)
    rows = np.arange(len(pos))
    s_pos = scores[rows, pos][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    ahead = (scores > s_pos) | ((scores == s_pos) & (idx < pos[:, None]))
    return 1 + ahead.sum(axis=1)


def metrics_from_ranks(ranks, k: int) -> EvalResult:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise DomainError("cannot evaluate an empty test set")
    hit = ranks <= k
    ndcg = np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)
    return EvalResult(hit_rate_at_k=float(hit.mean()), ndcg_at_k=float(ndcg.mean()),
                      mrr=float(np.mean(1.0 / ranks)), k=k)


def evaluate_scores(scores, pos, k: int) -> EvalResult:
    scores = np.asarray(scores)
    if scores.ndim != 2 or len(scores) == 0:
        raise DomainError("cannot evaluate an empty test set")
    if not 1 <= k <= scores.shape[1]:
        raise ConfigError(f"K must lie in [1, m={scores.shape[1]}]")
    return metrics_from_ranks(positive_ranks(scores, pos), k)


def score_dataset(model, dataset, chunk: int = 512) -> np.ndarray:
    from .model import forward_batch

    out = [forward_batch(model, dataset.seq[lo:lo + chunk], dataset.cands[lo:lo + chunk])
           for lo in range(0, len(dataset), chunk)]
    return np.vstack(out) if out else np.empty((0, dataset.m))


def evaluate(model, dataset_test, k: int = 10) -> EvalResult:
    if len(dataset_test) == 0:
        raise DomainError("cannot evaluate an empty test set")
    return evaluate_scores(score_dataset(model, dataset_test), dataset_test.pos, k)
