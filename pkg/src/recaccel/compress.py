"""Iterative magnitude pruning followed by dynamic-range quantization and QAT.

Only the MLP tower weights (hidden layers and output head) are pruned and
quantized; the embedding table, attention projections and biases stay in
full precision.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .cost import CostParams, STORAGE_BITS
from .exceptions import ConfigError, NumericError, ShapeError
from .metrics import evaluate
from .model import Model, cost_report
from .quant import QuantParams, in_range, quant_params, quantize_weights
from .train import fit_loop

__all__ = [
    "PruneSchedule", "QuantParams", "compute_threshold", "make_mask", "prune_step",
    "sparsity", "prune_loop", "quant_params", "quantize_weights", "quantize_model",
    "fake_quant_forward", "fake_quant_backward", "qat_train", "pipeline_run",
]


@dataclass(frozen=True)
class PruneSchedule:
    p_target: float
    rounds: int = 3
    finetune_epochs: int = 1
    lr: float = 0.005
    batch_size: int = 32
    scope: str = "global"

    def __post_init__(self):
        if not 0 <= self.p_target < 1:
            raise ConfigError("p_target must lie in [0, 1)")
        if self.rounds < 1 or self.finetune_epochs < 0:
            raise ConfigError("rounds must be >= 1 and finetune_epochs >= 0")
        if self.scope not in ("global", "layer"):
            raise ConfigError("scope must be 'global' or 'layer'")


def compute_threshold(magnitudes, p: float) -> float:
    """Smallest kept magnitude so that a fraction ``p`` falls strictly below it."""
    if not 0 <= p < 1:
        raise ConfigError("pruning ratio must lie in [0, 1); pruning everything is degenerate")
    mags = np.sort(np.abs(np.asarray(magnitudes, dtype=np.float64)).ravel())
    if mags.size == 0:
        raise ConfigError("need at least one weight")
    return float(mags[int(math.floor(p * mags.size + 1e-9))])


def make_mask(W, theta: float) -> np.ndarray:
    return (np.abs(np.asarray(W)) >= theta).astype(np.float64)


def prune_step(W, mask) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if W.shape != mask.shape:
        raise ShapeError(f"weights {W.shape} and mask {mask.shape} differ")
    return W * mask


def sparsity(model: Model) -> float:
    total = kept = 0
    for name in model.tower_names:
        W = model.params[name]
        total += W.size
        mask = model.masks.get(name)
        kept += int(mask.sum()) if mask is not None else W.size
    return 1.0 - kept / total


def _prune_round(model: Model, target: float, scope: str) -> list:
    names = model.tower_names
    if scope == "global":
        theta = compute_threshold(np.concatenate([model.params[n].ravel() for n in names]), target)
        thetas = [theta] * len(names)
    else:
        thetas = [compute_threshold(model.params[n], target) for n in names]
    for name, theta in zip(names, thetas):
        W = model.params[name]
        new = make_mask(W, theta)
        if name in model.masks:
            new = new * model.masks[name]
        model.masks[name] = new
        model.params[name] = prune_step(W, new)
    return thetas


def prune_loop(model: Model, schedule: PruneSchedule, dataset, seed: int = 0,
               eval_k: int = 10) -> tuple:
    """Prune to cumulative targets ``p*k/K`` and fine-tune after every round.

    Works on a copy.  Returns ``(pruned_model, history)``.  If fine-tuning
    diverges, the raised :class:`NumericError` carries the model as of the
    last completed round in ``err.model``.
    """
    model = model.copy()
    tr, te = dataset.train(), dataset.test()
    history = []
    if schedule.p_target == 0:
        # Nothing to prune: fine-tune only, without attaching masks.
        for k in range(1, schedule.rounds + 1):
            _finetune(model, tr, schedule, seed + k)
            history.append(_round_record(model, k, 0.0, [], tr, te, eval_k))
        return model, history
    for k in range(1, schedule.rounds + 1):
        target = schedule.p_target * k / schedule.rounds
        last_good = model.copy()
        thetas = _prune_round(model, target, schedule.scope)
        try:
            _finetune(model, tr, schedule, seed + k)
        except NumericError as err:
            err.model = last_good
            raise
        history.append(_round_record(model, k, target, thetas, tr, te, eval_k))
    return model, history


def _finetune(model: Model, tr, schedule: PruneSchedule, seed: int) -> None:
    if schedule.finetune_epochs:
        fit_loop(model, tr.seq, tr.cands, tr.pos, epochs=schedule.finetune_epochs,
                 lr=schedule.lr, batch_size=schedule.batch_size, seed=seed)


def _round_record(model, k, target, thetas, tr, te, eval_k) -> dict:
    from .train import task_loss

    rec = {"round": k, "target": target, "sparsity": sparsity(model),
           "thresholds": [float(t) for t in thetas],
           "task_loss": task_loss(model, tr.seq, tr.cands, tr.pos)}
    if len(te):
        rec["eval"] = evaluate(model, te, min(eval_k, te.m)).to_dict()
    return rec


def quantize_model(model: Model, bits: int) -> Model:
    """Post-training quantization of every tower layer, in place."""
    for name in model.tower_names:
        qp = quant_params(model.params[name], bits)
        model.qparams[name] = qp
        model.params[name] = quantize_weights(model.params[name], qp)
    model.fake_quant = False
    return model


def fake_quant_forward(W, qp: QuantParams) -> np.ndarray:
    """Weights seen by the forward pass during quantization-aware training."""
    return quantize_weights(W, qp)


def fake_quant_backward(grad, W, qp: QuantParams) -> np.ndarray:
    """Straight-through gradient: identity except where clipping saturated."""
    return np.asarray(grad) * in_range(W, qp)


def qat_train(model: Model, dataset, bits: int, epochs: int, lr: float = 0.002,
              batch_size: int = 32, seed: int = 0, frozen_range: bool = False) -> tuple:
    """Quantization-aware training in place, then bake in the quantized weights.

    Quantization ranges are refreshed from the current weights at the start
    of every epoch unless ``frozen_range`` is set.
    """
    tr = dataset.train()

    def refresh(m: Model, epoch: int) -> None:
        if frozen_range and m.qparams:
            return
        for name in m.tower_names:
            m.qparams[name] = quant_params(m.params[name], bits)

    refresh(model, 0)
    model.fake_quant = True
    history = fit_loop(model, tr.seq, tr.cands, tr.pos, epochs=epochs, lr=lr,
                       batch_size=batch_size, seed=seed, before_epoch=refresh)
    model.fake_quant = False
    if not frozen_range:
        refresh(model, epochs + 1)
    for name in model.tower_names:
        model.params[name] = quantize_weights(model.params[name], model.qparams[name])
    model.apply_masks()
    return model, history


def pipeline_run(model: Model, schedule: PruneSchedule, bits: int, qat_epochs: int, dataset,
                 cost_params: Optional[CostParams] = None, qat_lr: float = 0.002,
                 seed: int = 0, eval_k: int = 10) -> tuple:
    """prune -> fine-tune -> quantize -> QAT.  Returns ``(model, report)``.

    ``bits=32`` keeps full precision and skips the quantization stage.
    """
    if bits not in STORAGE_BITS:
        raise ConfigError(f"bits must be one of {STORAGE_BITS}")
    cp = cost_params or CostParams(alpha=1e-6, beta=5.0)
    te = dataset.test()
    before = cost_report(model, cp)
    eval_before = evaluate(model, te, min(eval_k, te.m)) if len(te) else None
    if schedule.p_target > 0:
        pruned, rounds = prune_loop(model, schedule, dataset, seed=seed, eval_k=eval_k)
    else:
        # Zero target: the prune stage (and its fine-tuning) is skipped outright.
        pruned, rounds = model.copy(), []
    qat_hist: list = []
    if bits < 32:
        if qat_epochs > 0:
            pruned, qat_hist = qat_train(pruned, dataset, bits, qat_epochs, lr=qat_lr,
                                         batch_size=schedule.batch_size, seed=seed + 1000)
        else:
            quantize_model(pruned, bits)
    after = cost_report(pruned, cp)
    report = {
        "schedule": asdict(schedule),
        "bits": bits,
        "qat_epochs": qat_epochs,
        "rounds": rounds,
        "qat_history": qat_hist,
        "quant_params": {n: qp.to_dict() for n, qp in sorted(pruned.qparams.items())},
        "cost_before": before.to_dict(),
        "cost_after": after.to_dict(),
        "storage_ratio": after.storage_bytes / before.storage_bytes,
        "mac_retention": after.flops / before.flops,
        "sparsity": sparsity(pruned),
    }
    if eval_before is not None:
        eval_after = evaluate(pruned, te, min(eval_k, te.m))
        report["eval_before"] = eval_before.to_dict()
        report["eval_after"] = eval_after.to_dict()
        report["eval_delta"] = {k: eval_after.to_dict()[k] - eval_before.to_dict()[k]
                                for k in ("hit_rate_at_k", "ndcg_at_k", "mrr")}
    return pruned, report
