"""Mini-batch training of the ranking model with manual backprop."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .exceptions import NumericError
from .model import Model, backward_batch, forward_batch
from .tensor import GradCheckResult, _softmax_lastaxis, finite_difference_grad_check


def softmax_cross_entropy(scores: np.ndarray, pos: np.ndarray) -> tuple:
    """Mean candidate-softmax cross-entropy and its gradient w.r.t. ``scores``."""
    B = scores.shape[0]
    z = scores - scores.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(np.mean(logp[np.arange(B), pos]))
    d = _softmax_lastaxis(scores)
    d[np.arange(B), pos] -= 1.0
    return loss, d / B


def task_loss(model: Model, seq, cands, pos, chunk: int = 512) -> float:
    """Mean task loss over a full split, evaluated in chunks."""
    n = len(pos)
    total = 0.0
    for lo in range(0, n, chunk):
        sl = slice(lo, lo + chunk)
        scores = forward_batch(model, seq[sl], cands[sl])
        loss, _ = softmax_cross_entropy(scores, np.asarray(pos[sl]))
        total += loss * len(pos[sl])
    return total / n


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# Extra loss hook: (model, seq_batch, cache) -> (loss_value, dmaps or None)
ExtraLoss = Callable[[Model, np.ndarray, dict], tuple]


def fit_loop(model: Model, seq, cands, pos, *, epochs: int, lr: float, batch_size: int = 32,
             seed: int = 0, extra_loss: Optional[ExtraLoss] = None,
             before_epoch: Optional[Callable[[Model, int], None]] = None,
             after_epoch: Optional[Callable[[Model, int], dict]] = None,
             trainable: Optional[set] = None) -> list:
    """Train ``model`` in place; returns one history record per epoch.

    Record 0 is the state before training.  ``after_epoch`` may return extra
    fields for each record.  ``trainable`` restricts which parameters are
    updated (all by default).
    """
    seq, cands, pos = np.asarray(seq), np.asarray(cands), np.asarray(pos)
    n = len(pos)
    rng = np.random.default_rng(seed)
    opt = Adam(lr)
    history = [{"epoch": 0, "task_loss": task_loss(model, seq, cands, pos)}]
    if after_epoch is not None:
        history[0].update(after_epoch(model, 0))
    for epoch in range(1, epochs + 1):
        if before_epoch is not None:
            before_epoch(model, epoch)
        order = rng.permutation(n)
        extra_total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            cache: dict = {}
            scores = forward_batch(model, seq[idx], cands[idx], cache)
            loss, dscores = softmax_cross_entropy(scores, pos[idx])
            dmaps = None
            if extra_loss is not None:
                extra, dmaps = extra_loss(model, seq[idx], cache)
                loss += extra
                extra_total += extra * len(idx)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            grads = backward_batch(model, cache, dscores, dmaps)
            if trainable is not None:
                grads = {k: g for k, g in grads.items() if k in trainable}
            opt.step(model.params, grads)
            model.apply_masks()
        record = {"epoch": epoch, "task_loss": task_loss(model, seq, cands, pos)}
        if not np.isfinite(record["task_loss"]):
            raise NumericError(f"non-finite loss after epoch {epoch}")
        if extra_loss is not None:
            record["extra_loss"] = extra_total / n
        if after_epoch is not None:
            record.update(after_epoch(model, epoch))
        history.append(record)
    return history


def train_task(model: Model, dataset, epochs: int = 10, lr: float = 0.01, seed: int = 0,
               batch_size: int = 32) -> tuple:
    """Train on the dataset's train split.  Returns ``(model, loss_curve)``."""
    tr = dataset.train()
    hist = fit_loop(model, tr.seq, tr.cands, tr.pos, epochs=epochs, lr=lr,
                    batch_size=batch_size, seed=seed)
    return model, [h["task_loss"] for h in hist]


# -- gradient verification ---------------------------------------------------------

def _flatten(params: dict, names: list) -> np.ndarray:
    return np.concatenate([params[n].ravel() for n in names])[None, :]


def _assign(params: dict, names: list, vec: np.ndarray) -> None:
    flat = vec.ravel()
    off = 0
    for n in names:
        size = params[n].size
        params[n] = flat[off:off + size].reshape(params[n].shape).copy()
        off += size


def check_gradients(model: Model, loss_and_grads: Callable[[Model], tuple],
                    names: Optional[list] = None, epsilon: float = 1e-6) -> GradCheckResult:
    """Central-difference check of ``loss_and_grads(model) -> (loss, grads)``.

    Every parameter listed in ``names`` (default: all) is perturbed; the
    model is left unchanged.
    """
    work = model.copy()
    names = sorted(work.params) if names is None else list(names)
    _, grads = loss_and_grads(work)
    analytic = _flatten({n: grads.get(n, np.zeros_like(work.params[n])) for n in names}, names)
    original = _flatten(work.params, names)

    def loss_fn(vec):
        _assign(work.params, names, vec)
        return loss_and_grads(work)[0]

    result = finite_difference_grad_check(loss_fn, original, analytic, epsilon=epsilon)
    _assign(work.params, names, original)
    return result


def task_objective(seq, cands, pos) -> Callable[[Model], tuple]:
    """``loss_and_grads`` callable for :func:`check_gradients` on the task loss."""
    def fn(model: Model):
        cache: dict = {}
        scores = forward_batch(model, seq, cands, cache)
        loss, dscores = softmax_cross_entropy(scores, np.asarray(pos))
        return loss, backward_batch(model, cache, dscores)
    return fn
