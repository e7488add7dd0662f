"""Dynamic-range weight quantization primitives.

Step size and clipping range come from the nonzero entries of a layer, so
pruned positions stay exactly zero through quantization.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError


@dataclass(frozen=True)
class QuantParams:
    bits: int
    step: float
    w_min: float
    w_max: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QuantParams":
        return cls(int(d["bits"]), float(d["step"]), float(d["w_min"]), float(d["w_max"]))


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quant_params(W, bits: int) -> QuantParams:
    """Range and step ``(max - min) / (2**(bits-1) - 1)`` over nonzero weights."""
    if not 2 <= bits <= 32:
        raise ConfigError(f"bits must lie in [2, 32], got {bits}")
    W = np.asarray(W, dtype=np.float64)
    nz = W[W != 0]
    if nz.size == 0:
        raise ConfigError("cannot quantize an all-zero layer")
    w_min, w_max = float(nz.min()), float(nz.max())
    step = (w_max - w_min) / (2 ** (bits - 1) - 1) if w_max > w_min else 0.0
    return QuantParams(bits=bits, step=step, w_min=w_min, w_max=w_max)


def quantize_weights(W, qp: QuantParams) -> np.ndarray:
    """``clip(round(w / s) * s, w_min, w_max)`` on nonzero entries, zeros kept."""
    W = np.asarray(W, dtype=np.float64)
    out = np.zeros_like(W)
    nz = W != 0
    if qp.step == 0.0:
        out[nz] = qp.w_min
        return out
    q = round_half_away(W[nz] / qp.step) * qp.step
    out[nz] = np.clip(q, qp.w_min, qp.w_max)
    return out


def in_range(W, qp: QuantParams) -> np.ndarray:
    """Positions where the straight-through gradient passes (not saturated)."""
    W = np.asarray(W)
    return (W == 0) | ((W >= qp.w_min) & (W <= qp.w_max))


def fake_quant_tensor(x: np.ndarray, bits: int) -> np.ndarray:
    """Per-tensor dynamic-range fake quantization of activations."""
    if not np.any(x):
        return x
    return quantize_weights(x, quant_params(x, bits))
