"""Analytic parameter, compute, latency and memory accounting."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError

STORAGE_BITS = (8, 16, 32)


def param_count_formula(d_e: int, h: int, depth: int) -> int:
    """Weight count of the MLP tower: ``d_e*h + (depth-1)*h**2 + h``."""
    if min(d_e, h, depth) < 1:
        raise ConfigError("d_e, h and depth must be >= 1")
    return d_e * h + (depth - 1) * h * h + h


def flops_formula(m: int, d_e: int, h: int, depth: int) -> int:
    """MACs of scoring ``m`` candidates (one MAC counted as one FLOP)."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    return m * param_count_formula(d_e, h, depth)


@dataclass(frozen=True)
class CostParams:
    """Latency law coefficients: ``alpha`` ms per MAC plus ``beta`` ms overhead."""

    alpha: float
    beta: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0 or self.beta < 0:
            raise ConfigError("need alpha > 0 and beta >= 0")

    def scaled(self, factor: float) -> "CostParams":
        return CostParams(self.alpha * factor, self.beta)


def predict_latency(cp: CostParams, m: int, depth: int, h: int) -> float:
    return cp.alpha * m * depth * h * h + cp.beta


def memory_footprint(P: int, b_p: int, m: int, h: int, b_a: int) -> tuple:
    """``(parameter bytes, activation bytes)``."""
    if min(P, b_p, m, h, b_a) < 0:
        raise ConfigError("memory_footprint arguments must be >= 0")
    return P * b_p, m * h * b_a


def model_storage_bytes(params_retained, bits: int) -> int:
    if bits not in STORAGE_BITS:
        raise ConfigError(f"storage bit width must be one of {STORAGE_BITS}, got {bits}")
    if params_retained < 0 or float(params_retained) != int(params_retained):
        raise ConfigError("params_retained must be a non-negative whole number")
    return int(params_retained) * bits // 8


@dataclass(frozen=True)
class CostReport:
    params: int
    params_retained: int
    bits: int
    flops: int
    latency_ms_predicted: float
    mem_params_bytes: int
    mem_act_bytes: int
    storage_bytes: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_cost_params(samples) -> tuple:
    """Least-squares fit of ``latency = alpha * macs + beta``.

    ``samples`` is an iterable of ``(macs, latency_ms)``.  Returns
    ``(CostParams, r_squared)``.
    """
    arr = np.asarray(list(samples), dtype=np.float64)
    x, y = arr[:, 0], arr[:, 1]
    design = np.column_stack([x, np.ones_like(x)])
    (alpha, beta), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ np.array([alpha, beta])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    # A negative intercept is measurement noise; keep the law's domain.
    return CostParams(max(float(alpha), 1e-15), max(float(beta), 0.0)), r2


def time_call(fn, repeats: int = 5) -> float:
    """Best-of-``repeats`` wall-clock milliseconds of ``fn()``."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, (time.perf_counter() - t0) * 1e3)
    return best
