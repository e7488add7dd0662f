"""Embedding -> (optional attention) -> MLP tower -> per-candidate score.

Parameters live in a flat ``name -> float64 array`` dict so gradients,
optimizers and the file format can treat them uniformly:

* ``emb``                      item embedding table ``(n_items, d_e)``
* ``attn.{t}.Wq|Wk|Wv``        attention projections ``(d_e, d_e)``
* ``tower.{i}.W`` / ``.b``     hidden layers, ``d_e -> h`` then ``h -> h``
* ``head.W`` / ``head.b``      scalar output head ``(h, 1)``

A request is scored by pooling the user's behavior sequence into a vector
``u`` and feeding ``emb[candidate] * u`` through the tower.
"""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import attention as attn
from .attention import AttentionConfig
from .cost import CostParams, CostReport, STORAGE_BITS, memory_footprint, model_storage_bytes, param_count_formula
from .exceptions import ConfigError, ShapeError
from .quant import fake_quant_tensor, in_range, quantize_weights
from .tensor import as_matrix, relu


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters.

    ``d_in`` is the raw feature width; it is informational only since inputs
    enter through the embedding table.
    """

    n_items: int
    d_e: int = 16
    h: int = 64
    depth: int = 3
    m: int = 50
    d_in: int = 1
    b_p: int = 4
    b_a: int = 4
    attention: Optional[AttentionConfig] = None

    def __post_init__(self):
        for name in ("n_items", "d_e", "h", "depth", "m", "d_in"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.b_p not in (1, 2, 4) or self.b_a not in (1, 2, 4):
            raise ConfigError("b_p and b_a must be 1, 2 or 4 bytes")
        if self.attention is not None and self.attention.d_model != self.d_e:
            raise ConfigError("attention d_model must equal d_e")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attention"] = self.attention.to_dict() if self.attention else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        if d.get("attention") is not None:
            d["attention"] = AttentionConfig.from_dict(d["attention"])
        return cls(**d)


@dataclass
class Model:
    spec: ModelSpec
    params: dict
    masks: dict = field(default_factory=dict)
    qparams: dict = field(default_factory=dict)
    fake_quant: bool = False
    act_bits: Optional[int] = None

    @property
    def tower_names(self) -> list:
        return [f"tower.{i}.W" for i in range(self.spec.depth)] + ["head.W"]

    @property
    def bias_names(self) -> list:
        return [f"tower.{i}.b" for i in range(self.spec.depth)] + ["head.b"]

    @property
    def attention_names(self) -> list:
        a = self.spec.attention
        if a is None:
            return []
        return [f"attn.{t}.{k}" for t in range(a.n_layers) for k in ("Wq", "Wk", "Wv")]

    @property
    def embedding(self) -> np.ndarray:
        return self.params["emb"]

    @property
    def tower_layers(self) -> list:
        return [(self.params[f"tower.{i}.W"], self.params[f"tower.{i}.b"]) for i in range(self.spec.depth)]

    @property
    def output_head(self) -> np.ndarray:
        return self.params["head.W"]

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def effective_weight(self, name: str) -> np.ndarray:
        W = self.params[name]
        if name in self.masks:
            W = W * self.masks[name]
        if self.fake_quant and name in self.qparams:
            W = quantize_weights(W, self.qparams[name])
        return W

    def apply_masks(self) -> None:
        for name, mask in self.masks.items():
            self.params[name] *= mask


def _glorot(rng, fan_in, fan_out, shape=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Deterministic fan-based uniform initialization; biases start at zero."""
    rng = np.random.default_rng(seed)
    params = {"emb": _glorot(rng, 1, spec.d_e, (spec.n_items, spec.d_e))}
    if spec.attention is not None:
        d = spec.d_e
        for t in range(spec.attention.n_layers):
            for k in ("Wq", "Wk", "Wv"):
                params[f"attn.{t}.{k}"] = _glorot(rng, d, d)
    fan_in = spec.d_e
    for i in range(spec.depth):
        params[f"tower.{i}.W"] = _glorot(rng, fan_in, spec.h)
        params[f"tower.{i}.b"] = np.zeros((1, spec.h))
        fan_in = spec.h
    params["head.W"] = _glorot(rng, spec.h, 1)
    params["head.b"] = np.zeros((1, 1))
    return Model(spec=spec, params=params)


# -- forward / backward ----------------------------------------------------------

def _tower_forward(model: Model, F: np.ndarray, cache: Optional[dict]):
    H = F
    depth = model.spec.depth
    if cache is not None:
        cache["tower_in"] = []
        cache["tower_pre"] = []
    for i in range(depth):
        W = model.effective_weight(f"tower.{i}.W")
        if cache is not None:
            cache["tower_in"].append(H)
        Z = H @ W + model.params[f"tower.{i}.b"]
        if cache is not None:
            cache["tower_pre"].append(Z)
        H = relu(Z)
        if model.act_bits:
            H = fake_quant_tensor(H, model.act_bits)
    if cache is not None:
        cache["head_in"] = H
    return H @ model.effective_weight("head.W") + model.params["head.b"]


def _tower_backward(model: Model, dout: np.ndarray, cache: dict, grads: dict) -> np.ndarray:
    H = cache["head_in"]
    grads["head.W"] = H.T @ dout
    grads["head.b"] = dout.sum(axis=0, keepdims=True)
    dH = dout @ model.effective_weight("head.W").T
    for i in reversed(range(model.spec.depth)):
        # Activation fake-quant uses a straight-through gradient.
        dZ = dH * (cache["tower_pre"][i] > 0)
        grads[f"tower.{i}.W"] = cache["tower_in"][i].T @ dZ
        grads[f"tower.{i}.b"] = dZ.sum(axis=0, keepdims=True)
        dH = dZ @ model.effective_weight(f"tower.{i}.W").T
    return dH


def forward(model: Model, features) -> np.ndarray:
    """Score ``m`` candidate feature rows (``m x d_e``) -> ``m x 1``."""
    F = as_matrix(features, "features")
    if F.shape[1] != model.spec.d_e:
        raise ShapeError(f"features must have {model.spec.d_e} columns, got {F.shape[1]}")
    return _tower_forward(model, F, None)


def _attention_mask(model: Model):
    a = model.spec.attention
    return attn.allowed_mask(a) if a is not None else None


def user_vector(model: Model, seq: np.ndarray, cache: Optional[dict] = None) -> np.ndarray:
    E = model.params["emb"]
    Z = E[seq]
    a = model.spec.attention
    if a is not None:
        if seq.shape[1] != a.seq_len:
            raise ShapeError(f"sequence length {seq.shape[1]} != attention seq_len {a.seq_len}")
        mask = _attention_mask(model)
        layers = []
        for t in range(a.n_layers):
            O, c = attn.mha_forward(Z, model.params[f"attn.{t}.Wq"], model.params[f"attn.{t}.Wk"],
                                    model.params[f"attn.{t}.Wv"], a.n_heads, mask)
            layers.append(c)
            Z = Z + O
        if cache is not None:
            cache["attn"] = layers
    return Z.mean(axis=1)


def forward_batch(model: Model, seq, cands, cache: Optional[dict] = None) -> np.ndarray:
    """Scores ``(B, m)`` for sequences ``(B, L)`` and candidates ``(B, m)``."""
    seq = np.asarray(seq)
    cands = np.asarray(cands)
    if seq.ndim != 2 or cands.ndim != 2 or seq.shape[0] != cands.shape[0]:
        raise ShapeError("seq and cands must be 2-D with the same number of rows")
    B, m = cands.shape
    u = user_vector(model, seq, cache)
    Xc = model.params["emb"][cands]
    F = Xc * u[:, None, :]
    if cache is not None:
        cache.update(seq=seq, cands=cands, u=u, Xc=Xc)
    s = _tower_forward(model, F.reshape(B * m, -1), cache)
    return s.reshape(B, m)


def attention_maps(model: Model, seq) -> list:
    """Head-averaged attention maps per layer, each ``(B, L, L)``."""
    cache: dict = {}
    user_vector(model, np.asarray(seq), cache)
    return [c["A"].mean(axis=1) for c in cache.get("attn", [])]


def backward_batch(model: Model, cache: dict, dscores: np.ndarray, dmaps: Optional[list] = None) -> dict:
    """Gradients of a scalar loss given ``dL/dscores`` (and optionally ``dL/dmap``).

    ``dmaps[t]`` is the gradient on the head-averaged map of attention layer
    ``t`` (``None`` entries are skipped).  Returned weight gradients are
    already masked and passed through the straight-through estimator.
    """
    B, m = dscores.shape
    grads: dict = {}
    dF = _tower_backward(model, dscores.reshape(B * m, 1), cache, grads).reshape(B, m, -1)
    u, Xc = cache["u"], cache["Xc"]
    dE = np.zeros_like(model.params["emb"])
    np.add.at(dE, cache["cands"], dF * u[:, None, :])
    du = np.sum(dF * Xc, axis=1)
    seq = cache["seq"]
    L = seq.shape[1]
    dZ = np.repeat(du[:, None, :] / L, L, axis=1)
    a = model.spec.attention
    if a is not None:
        for t in reversed(range(a.n_layers)):
            c = cache["attn"][t]
            extra = None
            if dmaps is not None and dmaps[t] is not None:
                extra = np.repeat(dmaps[t][:, None] / a.n_heads, a.n_heads, axis=1)
            dX, dWq, dWk, dWv = attn.mha_backward(dZ, c, model.params[f"attn.{t}.Wq"],
                                                  model.params[f"attn.{t}.Wk"],
                                                  model.params[f"attn.{t}.Wv"], extra)
            grads[f"attn.{t}.Wq"], grads[f"attn.{t}.Wk"], grads[f"attn.{t}.Wv"] = dWq, dWk, dWv
            dZ = dZ + dX
    np.add.at(dE, seq, dZ)
    grads["emb"] = dE
    for name in model.tower_names:
        if model.fake_quant and name in model.qparams:
            grads[name] = grads[name] * in_range(model.params[name], model.qparams[name])
        if name in model.masks:
            grads[name] = grads[name] * model.masks[name]
    return grads


# -- accounting ------------------------------------------------------------------

def count_actual_params(model: Model) -> int:
    """Retained tower weights (mask ones where a mask exists)."""
    total = 0
    for name in model.tower_names:
        mask = model.masks.get(name)
        total += int(mask.sum()) if mask is not None else model.params[name].size
    return total


def count_stored_params(model: Model) -> int:
    return sum(model.params[n].size for n in model.tower_names)


def count_bias_params(model: Model) -> int:
    return sum(model.params[n].size for n in model.bias_names)


def count_attention_params(model: Model) -> int:
    return sum(model.params[n].size for n in model.attention_names)


def count_actual_macs(model: Model, m: Optional[int] = None) -> int:
    """Tower MACs for one ``m``-candidate forward pass, skipping masked weights."""
    m = model.spec.m if m is None else m
    return m * count_actual_params(model)


def model_bits(model: Model) -> int:
    """Storage bit width of the tower weights."""
    bits = {qp.bits for n, qp in model.qparams.items() if n in model.tower_names}
    if not bits:
        return 32
    if len(bits) > 1:
        raise ConfigError(f"mixed tower bit widths {sorted(bits)}")
    return bits.pop()


def cost_report(model: Model, cp: CostParams, bits: Optional[int] = None) -> CostReport:
    bits = model_bits(model) if bits is None else bits
    if bits not in STORAGE_BITS:
        raise ConfigError(f"storage bit width must be one of {STORAGE_BITS}")
    retained = count_actual_params(model)
    macs = count_actual_macs(model)
    mem_p, mem_a = memory_footprint(retained, bits // 8, model.spec.m, model.spec.h, model.spec.b_a)
    return CostReport(
        params=count_stored_params(model),
        params_retained=retained,
        bits=bits,
        flops=macs,
        latency_ms_predicted=cp.alpha * macs + cp.beta,
        mem_params_bytes=mem_p,
        mem_act_bytes=mem_a,
        storage_bytes=model_storage_bytes(retained, bits),
    )


def formula_params(spec: ModelSpec) -> int:
    return param_count_formula(spec.d_e, spec.h, spec.depth)
