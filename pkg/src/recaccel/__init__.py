"""Compression, distillation and serving simulation for sequence-aware rankers."""
__version__ = "0.1.0"

from .attention import AttentionConfig, attention_full, attention_macs, sparse_attention
from .compress import PruneSchedule, pipeline_run, prune_loop, qat_train, quantize_model, sparsity
from .cost import (
    CostParams, CostReport, flops_formula, memory_footprint, model_storage_bytes,
    param_count_formula, predict_latency,
)
from .data import Dataset, generate_synthetic
from .distill import DistillConfig, distill_train, kd_loss
from .estimators import CompressedRanker, DistilledRanker, RecRanker
from .exceptions import (
    ConfigError, DomainError, NumericError, RecAccelError, ReportError, ShapeError,
)
from .io import load_model, model_checksum, save_model
from .metrics import EvalResult, evaluate
from .model import Model, ModelSpec, build_model, count_actual_macs, count_actual_params, forward
from .quant import QuantParams, quant_params, quantize_weights

__all__ = [
    "AttentionConfig",
    "CompressedRanker",
    "ConfigError",
    "CostParams",
    "CostReport",
    "Dataset",
    "DistillConfig",
    "DistilledRanker",
    "DomainError",
    "EvalResult",
    "Model",
    "ModelSpec",
    "NumericError",
    "PruneSchedule",
    "QuantParams",
    "RecAccelError",
    "RecRanker",
    "ReportError",
    "ShapeError",
    "attention_full",
    "attention_macs",
    "build_model",
    "count_actual_macs",
    "count_actual_params",
    "distill_train",
    "evaluate",
    "flops_formula",
    "forward",
    "generate_synthetic",
    "kd_loss",
    "load_model",
    "memory_footprint",
    "model_checksum",
    "model_storage_bytes",
    "param_count_formula",
    "pipeline_run",
    "predict_latency",
    "prune_loop",
    "qat_train",
    "quant_params",
    "quantize_model",
    "quantize_weights",
    "save_model",
    "sparse_attention",
    "sparsity",
]
