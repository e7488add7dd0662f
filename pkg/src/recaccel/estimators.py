"""scikit-learn compatible wrappers around training, compression and distillation.

>>> ds = generate_synthetic(seed=0)
>>> tr, te = ds.train(), ds.test()
>>> base = RecRanker(n_items=ds.n_items).fit(tr.X, tr.y)
>>> small = CompressedRanker(base, prune_ratio=0.4, bits=8).fit(tr.X, tr.y)
>>> small.score(te.X, te.y)  # HitRate@10
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .attention import AttentionConfig
from .compress import PruneSchedule, pipeline_run
from .cost import CostParams
from .data import Dataset
from .distill import DistillConfig, distill_train
from .metrics import EvalResult, evaluate_scores
from .model import Model, ModelSpec, build_model, forward_batch
from .train import fit_loop
from .validation import check_events, check_labels


def events_dataset(X, y, n_items: int, n_candidates: int) -> Dataset:
    seq, cands = check_events(X, n_candidates, n_items)
    y = check_labels(y, len(seq), n_candidates)
    n = len(y)
    return Dataset(1, n_items, np.zeros(n, dtype=np.int64), seq, cands, y, np.ones(n, dtype=bool))


class _RankerMixin:
    """Scoring surface shared by every fitted ranker (needs ``model_``)."""

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        spec = self.model_.spec
        seq, cands = check_events(X, spec.m, spec.n_items)
        out = [forward_batch(self.model_, seq[lo:lo + 512], cands[lo:lo + 512])
               for lo in range(0, len(seq), 512)]
        return np.vstack(out)

    def predict(self, X) -> np.ndarray:
        """Position of the top-scored candidate per event."""
        return np.argmax(self.decision_function(X), axis=1)

    def evaluate(self, X, y, k: int = 10) -> EvalResult:
        scores = self.decision_function(X)
        return evaluate_scores(scores, check_labels(y, len(scores), scores.shape[1]), k)

    def score(self, X, y, k: int = 10) -> float:
        """HitRate@k."""
        return self.evaluate(X, y, k).hit_rate_at_k


class RecRanker(_RankerMixin, BaseEstimator):
    """Sequence-aware MLP ranker trained with candidate-softmax cross-entropy."""

    def __init__(self, n_items=1000, n_candidates=50, d_e=16, h=64, depth=3, n_heads=2,
                 attn_layers=1, window=None, random_samples=None, epochs=8, lr=0.01,
                 batch_size=32, random_state=0):
        self.n_items = n_items
        self.n_candidates = n_candidates
        self.d_e = d_e
        self.h = h
        self.depth = depth
        self.n_heads = n_heads
        self.attn_layers = attn_layers
        self.window = window
        self.random_samples = random_samples
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def make_spec(self, seq_len: int) -> ModelSpec:
        attention = None
        if self.attn_layers:
            attention = AttentionConfig(seq_len=seq_len, d_model=self.d_e, n_heads=self.n_heads,
                                        window=self.window, random_samples=self.random_samples,
                                        n_layers=self.attn_layers, seed=self.random_state)
        return ModelSpec(n_items=self.n_items, d_e=self.d_e, h=self.h, depth=self.depth,
                         m=self.n_candidates, attention=attention)

    def fit(self, X, y):
        seq, cands = check_events(X, self.n_candidates, self.n_items)
        y = check_labels(y, len(seq), self.n_candidates)
        self.model_ = build_model(self.make_spec(seq.shape[1]), seed=self.random_state)
        hist = fit_loop(self.model_, seq, cands, y, epochs=self.epochs, lr=self.lr,
                        batch_size=self.batch_size, seed=self.random_state)
        self.loss_curve_ = [h["task_loss"] for h in hist]
        return self

    @classmethod
    def from_model(cls, model: Model) -> "RecRanker":
        spec = model.spec
        a = spec.attention
        est = cls(n_items=spec.n_items, n_candidates=spec.m, d_e=spec.d_e, h=spec.h,
                  depth=spec.depth, n_heads=a.n_heads if a else 1,
                  attn_layers=a.n_layers if a else 0,
                  window=a.window if a else None, random_samples=a.random_samples if a else None)
        est.model_ = model
        return est


class CompressedRanker(_RankerMixin, BaseEstimator):
    """Prune, fine-tune, quantize and QAT a fitted ranker.

    ``estimator`` must already be fitted; its model is copied, never mutated.
    """

    def __init__(self, estimator, prune_ratio=0.4, rounds=3, finetune_epochs=1, finetune_lr=0.005,
                 bits=8, qat_epochs=1, qat_lr=0.002, scope="global", alpha=1e-6, beta=5.0,
                 random_state=0):
        self.estimator = estimator
        self.prune_ratio = prune_ratio
        self.rounds = rounds
        self.finetune_epochs = finetune_epochs
        self.finetune_lr = finetune_lr
        self.bits = bits
        self.qat_epochs = qat_epochs
        self.qat_lr = qat_lr
        self.scope = scope
        self.alpha = alpha
        self.beta = beta
        self.random_state = random_state

    def fit(self, X, y):
        check_is_fitted(self.estimator, "model_")
        base = self.estimator.model_
        ds = events_dataset(X, y, base.spec.n_items, base.spec.m)
        schedule = PruneSchedule(self.prune_ratio, self.rounds, self.finetune_epochs,
                                 self.finetune_lr, scope=self.scope)
        self.model_, self.report_ = pipeline_run(base, schedule, self.bits, self.qat_epochs, ds,
                                                 CostParams(self.alpha, self.beta),
                                                 qat_lr=self.qat_lr, seed=self.random_state)
        return self


class DistilledRanker(_RankerMixin, BaseEstimator):
    """Train a smaller student under attention-map supervision from ``teacher``."""

    def __init__(self, teacher, h=32, depth=2, n_heads=None, attn_layers=1, lambda_kd=1.0,
                 epochs=8, lr=0.01, batch_size=32, random_state=0):
        self.teacher = teacher
        self.h = h
        self.depth = depth
        self.n_heads = n_heads
        self.attn_layers = attn_layers
        self.lambda_kd = lambda_kd
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        check_is_fitted(self.teacher, "model_")
        t = self.teacher.model_
        ts = t.spec
        ds = events_dataset(X, y, ts.n_items, ts.m)
        att = AttentionConfig(seq_len=ds.seq_len, d_model=ts.d_e,
                              n_heads=self.n_heads or ts.attention.n_heads,
                              window=ts.attention.window, random_samples=ts.attention.random_samples,
                              n_layers=self.attn_layers, seed=self.random_state)
        spec = ModelSpec(n_items=ts.n_items, d_e=ts.d_e, h=self.h, depth=self.depth, m=ts.m,
                         attention=att)
        student = build_model(spec, seed=self.random_state)
        cfg = DistillConfig(self.lambda_kd, None, self.epochs, self.lr, self.batch_size)
        self.model_, self.history_ = distill_train(t, student, ds, cfg, seed=self.random_state)
        return self
