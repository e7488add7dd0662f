"""Attention-map distillation from a frozen teacher into a smaller student."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ConfigError, NumericError, ShapeError
from .metrics import evaluate
from .model import Model, attention_maps, count_attention_params, count_stored_params
from .tensor import KL_EPS, _kl_terms, check_distribution_rows
from .train import fit_loop


@dataclass(frozen=True)
class DistillConfig:
    lambda_kd: float = 1.0
    layer_map: Optional[tuple] = None
    epochs: int = 8
    lr: float = 0.01
    batch_size: int = 32

    def __post_init__(self):
        if self.lambda_kd < 0:
            raise ConfigError("lambda_kd must be >= 0")
        if self.layer_map is not None and self.lambda_kd > 0 and not self.layer_map:
            raise ConfigError("layer_map must be nonempty when lambda_kd > 0")


def uniform_layer_map(teacher_layers: int, student_layers: int) -> tuple:
    """Pair student layer ``j`` with teacher layer ``ceil((j+1)*T/S) - 1``."""
    return tuple((-(-(j + 1) * teacher_layers // student_layers) - 1, j)
                 for j in range(student_layers))


def _rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, x.shape[-1])


def kd_loss_and_grads(teacher_maps, student_maps) -> tuple:
    """Mean over pairs of row-averaged KL(teacher || student), plus d/d student."""
    if len(teacher_maps) != len(student_maps):
        raise ShapeError("teacher and student map lists differ in length")
    if not teacher_maps:
        raise ShapeError("need at least one map pair")
    total = 0.0
    grads = []
    n_pairs = len(teacher_maps)
    for p, q in zip(teacher_maps, student_maps):
        p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
        if p.shape != q.shape:
            raise ShapeError(f"paired maps differ: {p.shape} vs {q.shape}")
        pr, qr = _rows(p), _rows(q)
        n_rows = pr.shape[0]
        total += float(_kl_terms(pr, qr).sum(axis=-1).mean())
        g = np.where((p > 0) & (q >= KL_EPS), -p / np.maximum(q, KL_EPS), 0.0)
        grads.append(g / (n_rows * n_pairs))
    return total / n_pairs, grads


def kd_loss(teacher_maps, student_maps) -> float:
    for name, maps in (("teacher", teacher_maps), ("student", student_maps)):
        for mp in maps:
            check_distribution_rows(_rows(mp), name)
    return kd_loss_and_grads(teacher_maps, student_maps)[0]


def _paired_maps(teacher: Model, student: Model, seq, layer_map) -> tuple:
    t_maps = attention_maps(teacher, seq)
    s_maps = attention_maps(student, seq)
    return [t_maps[t] for t, _ in layer_map], [s_maps[s] for _, s in layer_map]


def distill_objective(teacher: Model, layer_map, lambda_kd: float, seq):
    """``(model, cache) -> (lambda * L_KD, dmaps)`` on one batch, for the trainer."""
    t_all = attention_maps(teacher, seq)

    def fn(student: Model, cache: dict) -> tuple:
        s_all = [c["A"].mean(axis=1) for c in cache["attn"]]
        t_maps = [t_all[t] for t, _ in layer_map]
        s_maps = [s_all[s] for _, s in layer_map]
        loss, g = kd_loss_and_grads(t_maps, s_maps)
        dmaps: list = [None] * len(s_all)
        for (_, s), gs in zip(layer_map, g):
            dmaps[s] = lambda_kd * gs if dmaps[s] is None else dmaps[s] + lambda_kd * gs
        return lambda_kd * loss, dmaps
    return fn


def distill_train(teacher: Model, student: Model, dataset, cfg: DistillConfig,
                  seed: int = 0, eval_k: int = 10) -> tuple:
    """Minimize ``L_task + lambda * L_KD`` on a copy of ``student``.

    The teacher is only read.  Returns ``(student, history)``; each history
    record carries ``task_loss`` and ``kd_loss`` measured over the full
    training split, plus test metrics.
    """
    ta, sa = teacher.spec.attention, student.spec.attention
    if ta is None or sa is None:
        raise ConfigError("teacher and student both need an attention block")
    if ta.seq_len != sa.seq_len:
        raise ConfigError("teacher and student must share seq_len")
    t_size = count_stored_params(teacher) + count_attention_params(teacher)
    s_size = count_stored_params(student) + count_attention_params(student)
    if s_size >= t_size:
        raise ConfigError("student must have fewer parameters than the teacher")
    layer_map = cfg.layer_map or uniform_layer_map(ta.n_layers, sa.n_layers)
    for t, s in layer_map:
        if not (0 <= t < ta.n_layers and 0 <= s < sa.n_layers):
            raise ConfigError(f"layer pair {(t, s)} out of range")

    student = student.copy()
    tr, te = dataset.train(), dataset.test()

    def log(model: Model, epoch: int) -> dict:
        t_maps, s_maps = [], []
        for lo in range(0, len(tr), 512):
            tm, sm = _paired_maps(teacher, model, tr.seq[lo:lo + 512], layer_map)
            t_maps.append(tm)
            s_maps.append(sm)
        pairs_t = [np.concatenate([b[i] for b in t_maps]) for i in range(len(layer_map))]
        pairs_s = [np.concatenate([b[i] for b in s_maps]) for i in range(len(layer_map))]
        rec = {"kd_loss": kd_loss_and_grads(pairs_t, pairs_s)[0]}
        if len(te):
            rec["eval"] = evaluate(model, te, min(eval_k, te.m)).to_dict()
        return rec

    def kd_term(model: Model, seq_b, cache: dict) -> tuple:
        return distill_objective(teacher, layer_map, cfg.lambda_kd, seq_b)(model, cache)

    extra = kd_term if cfg.lambda_kd > 0 else None

    history = fit_loop(student, tr.seq, tr.cands, tr.pos, epochs=cfg.epochs, lr=cfg.lr,
                       batch_size=cfg.batch_size, seed=seed, extra_loss=extra, after_epoch=log)
    if not np.isfinite(history[-1]["kd_loss"]):
        raise NumericError("distillation produced a non-finite KD loss")
    return student, history
