"""Self-attention over behavior sequences and its lightweight variants.

The batched kernels ``mha_forward`` / ``mha_backward`` work on
``(batch, seq, d_model)`` arrays and are shared with the ranking model.  The
public single-sequence functions take and return 2-D matrices.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigError, ShapeError
from .tensor import _softmax_lastaxis, as_matrix


@dataclass(frozen=True)
class AttentionConfig:
    """Shape and sparsity settings of one attention block.

    ``window=None`` means dense attention.  ``random_samples=None`` picks
    ``ceil(log2(seq_len))`` extra positions per query when the block is sparse.
    ``lowrank_rank=0`` keeps full-rank head projections and ``dw_kernel=0``
    disables the depthwise stage.
    """

    seq_len: int
    d_model: int
    n_heads: int = 1
    groups: int = 1
    lowrank_rank: int = 0
    window: Optional[int] = None
    random_samples: Optional[int] = None
    dw_kernel: int = 0
    n_layers: int = 1
    causal: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.seq_len < 1 or self.d_model < 1 or self.n_heads < 1 or self.n_layers < 1:
            raise ConfigError("seq_len, d_model, n_heads and n_layers must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.groups < 1 or self.d_model % self.groups:
            raise ConfigError(f"d_model={self.d_model} not divisible by groups={self.groups}")
        if not 0 <= self.lowrank_rank <= self.d_head:
            raise ConfigError(f"lowrank_rank must lie in [0, {self.d_head}]")
        if self.window is not None and self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.random_samples is not None and self.random_samples < 0:
            raise ConfigError("random_samples must be >= 0")
        if self.dw_kernel < 0 or (self.dw_kernel and self.dw_kernel % 2 == 0):
            raise ConfigError("dw_kernel must be 0 or odd")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def sparse(self) -> bool:
        return self.window is not None

    @property
    def effective_random_samples(self) -> int:
        if self.random_samples is not None:
            return self.random_samples
        return math.ceil(math.log2(self.seq_len)) if self.seq_len > 1 else 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AttentionConfig":
        return cls(**d)


@dataclass(frozen=True)
class SparsityPattern:
    """Sorted attended positions for every query."""

    indices: tuple

    def __len__(self):
        return len(self.indices)

    def sizes(self) -> list:
        return [len(ix) for ix in self.indices]

    def to_mask(self) -> np.ndarray:
        n = len(self.indices)
        mask = np.zeros((n, n), dtype=bool)
        for i, ix in enumerate(self.indices):
            mask[i, list(ix)] = True
        return mask


def sparsity_pattern(cfg: AttentionConfig) -> SparsityPattern:
    """Causal local window plus seeded random look-back positions."""
    L = cfg.seq_len
    if not cfg.sparse:
        if cfg.causal:
            return SparsityPattern(tuple(tuple(range(i + 1)) for i in range(L)))
        return SparsityPattern(tuple(tuple(range(L)) for _ in range(L)))
    w = min(cfg.window, L)
    g = cfg.effective_random_samples
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for i in range(L):
        lo = max(0, i - w + 1)
        attended = list(range(lo, i + 1))
        if g and lo > 0:
            extra = rng.choice(lo, size=min(g, lo), replace=False)
            attended.extend(int(j) for j in extra)
        rows.append(tuple(sorted(attended)))
    return SparsityPattern(tuple(rows))


def allowed_mask(cfg: AttentionConfig) -> Optional[np.ndarray]:
    """Boolean (L, L) mask of permitted query/key pairs, ``None`` if all."""
    if not cfg.sparse and not cfg.causal:
        return None
    return sparsity_pattern(cfg).to_mask()


# -- batched multi-head kernels ------------------------------------------------

def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    B, L, d = x.shape
    return x.reshape(B, L, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, H, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * dh)


def mha_forward(X, Wq, Wk, Wv, n_heads: int, mask: Optional[np.ndarray] = None):
    """Multi-head scaled dot-product attention (no output projection).

    Returns ``(output, cache)``; ``cache["A"]`` holds the per-head attention
    maps with shape ``(B, H, L, L)``.
    """
    d = X.shape[-1]
    dh = d // n_heads
    Q = _split_heads(X @ Wq, n_heads)
    K = _split_heads(X @ Wk, n_heads)
    V = _split_heads(X @ Wv, n_heads)
    S = Q @ K.transpose(0, 1, 3, 2) / math.sqrt(dh)
    if mask is not None:
        S = np.where(mask, S, -np.inf)
    A = _softmax_lastaxis(S)
    out = _merge_heads(A @ V)
    cache = {"X": X, "Q": Q, "K": K, "V": V, "A": A, "n_heads": n_heads}
    return out, cache


def mha_backward(dout, cache, Wq, Wk, Wv, dA_extra=None):
    """Gradients of ``mha_forward`` w.r.t. its input and projection weights.

    ``dA_extra`` is an additional upstream gradient on the attention maps
    (used by attention-map distillation).
    """
    X, Q, K, V, A, H = (cache[k] for k in ("X", "Q", "K", "V", "A", "n_heads"))
    dh = Q.shape[-1]
    dO = _split_heads(dout, H)
    dA = dO @ V.transpose(0, 1, 3, 2)
    if dA_extra is not None:
        dA = dA + dA_extra
    dV = A.transpose(0, 1, 3, 2) @ dO
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) / math.sqrt(dh)
    dQ = _merge_heads(dS @ K)
    dK = _merge_heads(dS.transpose(0, 1, 3, 2) @ Q)
    dV = _merge_heads(dV)
    dWq = np.einsum("bld,ble->de", X, dQ)
    dWk = np.einsum("bld,ble->de", X, dK)
    dWv = np.einsum("bld,ble->de", X, dV)
    dX = dQ @ Wq.T + dK @ Wk.T + dV @ Wv.T
    return dX, dWq, dWk, dWv


# -- single-sequence public surface --------------------------------------------

def _check_qkv(x: np.ndarray, weights: dict) -> tuple:
    d = x.shape[1]
    mats = []
    for key in ("Wq", "Wk", "Wv"):
        W = as_matrix(weights[key], key)
        if W.shape != (d, d):
            raise ShapeError(f"{key} must be ({d}, {d}), got {W.shape}")
        mats.append(W)
    return tuple(mats)


def attention_full(x, weights: dict, n_heads: int = 1, causal: bool = False,
                   return_maps: bool = False):
    """Dense multi-head self-attention over one sequence (L x d)."""
    x = as_matrix(x)
    if x.shape[1] % n_heads:
        raise ShapeError(f"d_model={x.shape[1]} not divisible by n_heads={n_heads}")
    Wq, Wk, Wv = _check_qkv(x, weights)
    L = x.shape[0]
    mask = np.tril(np.ones((L, L), dtype=bool)) if causal else None
    out, cache = mha_forward(x[None], Wq, Wk, Wv, n_heads, mask)
    if return_maps:
        return out[0], cache["A"][0]
    return out[0]


def sparse_attention(x, weights: dict, cfg: AttentionConfig, return_maps: bool = False):
    """Windowed + randomly sampled attention.  Returns ``(output, pattern)``."""
    x = as_matrix(x)
    if x.shape != (cfg.seq_len, cfg.d_model):
        raise ShapeError(f"x must be ({cfg.seq_len}, {cfg.d_model}), got {x.shape}")
    if cfg.window is None:
        raise ConfigError("sparse_attention needs a window")
    Wq, Wk, Wv = _check_qkv(x, weights)
    pattern = sparsity_pattern(cfg)
    out, cache = mha_forward(x[None], Wq, Wk, Wv, cfg.n_heads, pattern.to_mask())
    if return_maps:
        return out[0], pattern, cache["A"][0]
    return out[0], pattern


def grouped_projection(x, weight_groups: Sequence, k: int) -> np.ndarray:
    """Project ``k`` contiguous channel groups with their own square matrices."""
    x = as_matrix(x)
    d = x.shape[1]
    if k < 1 or d % k:
        raise ConfigError(f"d={d} not divisible by k={k}")
    if len(weight_groups) != k:
        raise ConfigError(f"expected {k} weight groups, got {len(weight_groups)}")
    dk = d // k
    out = np.empty_like(x)
    for g, W in enumerate(weight_groups):
        W = as_matrix(W, f"group {g}")
        if W.shape != (dk, dk):
            raise ShapeError(f"group {g} weight must be ({dk}, {dk}), got {W.shape}")
        out[:, g * dk:(g + 1) * dk] = x[:, g * dk:(g + 1) * dk] @ W
    return out


def depthwise_conv(x, dw_kernels) -> np.ndarray:
    """Per-channel 1-D convolution along the sequence, zero padded, centred."""
    x = as_matrix(x)
    kern = as_matrix(dw_kernels, "dw_kernels")
    c, d = kern.shape
    if d != x.shape[1]:
        raise ShapeError(f"kernel channels {d} != input channels {x.shape[1]}")
    if c % 2 == 0:
        raise ConfigError("depthwise kernel size must be odd")
    half = c // 2
    L = x.shape[0]
    padded = np.zeros((L + 2 * half, d))
    padded[half:half + L] = x
    out = np.zeros_like(x)
    for j in range(c):
        out += kern[j] * padded[j:j + L]
    return out


def depthwise_separable_projection(x, dw_kernels, pw_weights: Sequence, c: int, k: int) -> np.ndarray:
    kern = as_matrix(dw_kernels, "dw_kernels")
    if c % 2 == 0:
        raise ConfigError("depthwise kernel size must be odd")
    if kern.shape[0] != c:
        raise ShapeError(f"dw_kernels must have {c} rows, got {kern.shape[0]}")
    return grouped_projection(depthwise_conv(x, kern), pw_weights, k)


def lowrank_head_projection(x, factors: Sequence) -> list:
    """Per-head projections ``(x @ A_h) @ B_h`` from rank-r factor pairs."""
    x = as_matrix(x)
    d = x.shape[1]
    outs = []
    for h, (A, B) in enumerate(factors):
        A = as_matrix(A, f"A[{h}]")
        B = as_matrix(B, f"B[{h}]")
        r = A.shape[1]
        if A.shape[0] != d or B.shape[0] != r:
            raise ShapeError(f"head {h}: factors {A.shape} x {B.shape} do not chain from d={d}")
        if r < 1 or r > B.shape[1]:
            raise ConfigError(f"head {h}: rank {r} must lie in [1, d_head={B.shape[1]}]")
        outs.append((x @ A) @ B)
    return outs


def svd_factors(W, r: int) -> tuple:
    """Rank-``r`` factors ``(A, B)`` of ``W`` with ``A @ B`` the best approximation."""
    W = as_matrix(W, "W")
    if not 1 <= r <= min(W.shape):
        raise ConfigError(f"rank {r} out of range for {W.shape}")
    U, s, Vt = np.linalg.svd(W, full_matrices=False)
    return U[:, :r] * s[:r], Vt[:r]


def projection_macs_per_token(cfg: AttentionConfig) -> int:
    """MACs of one projection (Q, K or V) for one token."""
    d = cfg.d_model
    if cfg.lowrank_rank:
        r = cfg.lowrank_rank
        return cfg.n_heads * (d * r + r * cfg.d_head)
    dw = d * cfg.dw_kernel if cfg.dw_kernel else 0
    return dw + d * d // cfg.groups


def attention_mac_breakdown(cfg: AttentionConfig) -> dict:
    """Exact MACs of one attention layer split into projection and score/value."""
    L, d = cfg.seq_len, cfg.d_model
    projection = 3 * L * projection_macs_per_token(cfg)
    if cfg.sparse:
        score_value = sum(sparsity_pattern(cfg).sizes()) * d * 2
    else:
        score_value = L * L * d * 2
    return {"projection": projection, "score_value": score_value,
            "total": cfg.n_layers * (projection + score_value)}


def attention_macs(cfg: AttentionConfig) -> int:
    return attention_mac_breakdown(cfg)["total"]
