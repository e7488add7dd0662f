"""Five-variant benchmark matrix: baseline, quantized, pruned, pruned+quantized, distilled."""
from __future__ import annotations

import copy
import csv
import io
import json
from dataclasses import dataclass, field

from .attention import AttentionConfig
from .compress import PruneSchedule, pipeline_run, quantize_model
from .cost import CostParams, param_count_formula, time_call
from .data import Dataset, generate_synthetic
from .distill import DistillConfig, distill_train
from .exceptions import ReportError
from .metrics import evaluate
from .model import Model, ModelSpec, build_model, cost_report, count_attention_params, forward_batch
from .sim import Arrival, Batching, Scenario, ServiceModel, simulate
from .train import fit_loop

VARIANTS = ("baseline", "quantized", "pruned", "pruned+quantized", "distilled")

# Count columns: ratio columns are derived from these and nothing else.
COUNT_COLUMNS = ("params", "params_retained", "bits", "storage_bytes", "macs",
                 "latency_ms_predicted", "hit_rate_at_k", "ndcg_at_k", "mrr", "sim_throughput_rps")
RATIO_COLUMNS = ("params_retained", "storage_bytes", "macs", "latency_ms_predicted",
                 "hit_rate_at_k", "ndcg_at_k", "mrr", "sim_throughput_rps")

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {"users": 200, "items": 1000, "d_latent": 8, "events_per_user": 10, "m": 50,
             "seq_len": 20, "temperature": 0.25},
    "model": {"d_e": 16, "h": 64, "depth": 3, "n_heads": 2, "attn_layers": 1,
              "window": None, "random_samples": None},
    "train": {"epochs": 8, "lr": 0.01, "batch_size": 32},
    "prune": {"p_target": 0.4, "rounds": 3, "finetune_epochs": 1, "lr": 0.005, "scope": "global"},
    "quantize": {"bits": 8, "qat_epochs": 1, "qat_lr": 0.002},
    "distill": {"lambda_kd": 1.0, "epochs": 8, "lr": 0.01, "param_fraction": 0.2,
                "depth": 2, "attn_layers": 1, "bits": 16},
    "cost": {"alpha": 1e-5, "beta": 5.0},
    "eval": {"k": 10},
    "sim": {"duration_s": 10.0, "rate": 400.0, "max_batch": 8, "max_wait_ms": 5.0},
}


@dataclass
class BenchmarkMatrix:
    rows: list
    notes: dict = field(default_factory=dict)

    def row(self, variant: str) -> dict:
        for r in self.rows:
            if r["variant"] == variant:
                return r
        raise ReportError(f"no row for variant {variant!r}")

    def validate(self) -> None:
        names = [r.get("variant") for r in self.rows]
        if "baseline" not in names:
            raise ReportError("benchmark matrix has no baseline row")
        for r in self.rows:
            missing = [c for c in COUNT_COLUMNS if r.get(c) is None]
            if missing:
                raise ReportError(f"row {r.get('variant')!r} lacks {missing}")

    def with_ratios(self) -> list:
        self.validate()
        base = self.row("baseline")
        out = []
        for r in self.rows:
            rr = {k: r[k] for k in ("variant",) + COUNT_COLUMNS}
            for c in RATIO_COLUMNS:
                rr[f"{c}_ratio"] = r[c] / base[c] if base[c] else None
            out.append(rr)
        return out

    def to_dict(self) -> dict:
        return {"rows": self.with_ratios(), "notes": self.notes}

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkMatrix":
        return cls(rows=[{k: r.get(k) for k in ("variant",) + COUNT_COLUMNS} for r in d["rows"]],
                   notes=d.get("notes", {}))


def emit_report(matrix: BenchmarkMatrix, fmt: str = "json") -> str:
    """Render the matrix (with ratio-to-baseline columns) as JSON or CSV text."""
    rows = matrix.with_ratios()
    if fmt == "json":
        return json.dumps({"rows": rows, "notes": matrix.notes}, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                        for k, v in r.items()})
        return buf.getvalue()
    raise ReportError(f"unknown report format {fmt!r}")


def student_hidden(d_e: int, depth: int, target_params: float) -> int:
    """Hidden width whose tower weight count is closest to ``target_params``."""
    best, best_err = 1, float("inf")
    for h in range(1, 4097):
        err = abs(param_count_formula(d_e, h, depth) - target_params)
        if err < best_err:
            best, best_err = h, err
        elif param_count_formula(d_e, h, depth) > target_params:
            break
    return best


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(cfg: dict) -> dict:
    return _merge(DEFAULT_CONFIG, cfg)


def make_dataset(cfg: dict) -> Dataset:
    return generate_synthetic(seed=cfg["seed"], **cfg["data"])


def model_spec(cfg: dict, dataset: Dataset, **overrides) -> ModelSpec:
    mc = _merge(cfg["model"], overrides)
    att = None
    if mc["attn_layers"]:
        att = AttentionConfig(seq_len=dataset.seq_len, d_model=mc["d_e"], n_heads=mc["n_heads"],
                              window=mc["window"], random_samples=mc["random_samples"],
                              n_layers=mc["attn_layers"], seed=cfg["seed"])
    return ModelSpec(n_items=dataset.n_items, d_e=mc["d_e"], h=mc["h"], depth=mc["depth"],
                     m=dataset.m, attention=att)


def train_baseline(cfg: dict, dataset: Dataset) -> tuple:
    model = build_model(model_spec(cfg, dataset), seed=cfg["seed"])
    tr = dataset.train()
    t = cfg["train"]
    hist = fit_loop(model, tr.seq, tr.cands, tr.pos, epochs=t["epochs"], lr=t["lr"],
                    batch_size=t["batch_size"], seed=cfg["seed"])
    return model, hist


def prune_schedule(cfg: dict, p_target=None) -> PruneSchedule:
    p = cfg["prune"]
    return PruneSchedule(p["p_target"] if p_target is None else p_target, p["rounds"],
                         p["finetune_epochs"], p["lr"], cfg["train"]["batch_size"], p["scope"])


def make_student(cfg: dict, teacher: Model, dataset: Dataset) -> Model:
    dc = cfg["distill"]
    target = dc["param_fraction"] * param_count_formula(teacher.spec.d_e, teacher.spec.h,
                                                        teacher.spec.depth)
    h = student_hidden(teacher.spec.d_e, dc["depth"], target)
    spec = model_spec(cfg, dataset, h=h, depth=dc["depth"], attn_layers=dc["attn_layers"])
    return build_model(spec, seed=cfg["seed"] + 1)


def run_distill(cfg: dict, teacher: Model, dataset: Dataset) -> tuple:
    dc = cfg["distill"]
    student = make_student(cfg, teacher, dataset)
    dcfg = DistillConfig(dc["lambda_kd"], None, dc["epochs"], dc["lr"], cfg["train"]["batch_size"])
    student, hist = distill_train(teacher, student, dataset, dcfg, seed=cfg["seed"],
                                  eval_k=cfg["eval"]["k"])
    if dc.get("bits", 32) < 32:
        quantize_model(student, dc["bits"])
    return student, hist


def sim_throughput(cfg: dict, cp: CostParams, mac_ratio: float, model: Model) -> float:
    """Saturated simulated throughput with the latency law's alpha scaled by MAC retention."""
    sc = cfg["sim"]
    spec = model.spec
    scenario = Scenario(
        duration_s=sc["duration_s"],
        arrival=Arrival("poisson", rate=sc["rate"]),
        batching=Batching(sc["max_batch"], sc["max_wait_ms"]),
        service=ServiceModel(alpha=cp.alpha * mac_ratio, beta=cp.beta, m=spec.m,
                             depth=cfg["model"]["depth"], h=cfg["model"]["h"], noise="none"),
        seed=cfg["seed"],
    )
    return simulate(scenario).throughput_rps


def _row(variant: str, model: Model, cp: CostParams, dataset: Dataset, k: int) -> dict:
    rep = cost_report(model, cp)
    ev = evaluate(model, dataset.test(), k)
    return {"variant": variant, "params": rep.params, "params_retained": rep.params_retained,
            "bits": rep.bits, "storage_bytes": rep.storage_bytes, "macs": rep.flops,
            "latency_ms_predicted": rep.latency_ms_predicted, "hit_rate_at_k": ev.hit_rate_at_k,
            "ndcg_at_k": ev.ndcg_at_k, "mrr": ev.mrr,
            "attention_params": count_attention_params(model)}


def run_benchmark(cfg: dict) -> tuple:
    """Build all five variants.  Returns ``(matrix, models)``."""
    cfg = resolve_config(cfg)
    ds = make_dataset(cfg)
    cp = CostParams(**cfg["cost"])
    k = cfg["eval"]["k"]
    q = cfg["quantize"]
    seed = cfg["seed"]
    baseline, _ = train_baseline(cfg, ds)
    models = {"baseline": baseline}
    models["quantized"], _ = pipeline_run(baseline, PruneSchedule(0.0, rounds=1, finetune_epochs=0),
                                          q["bits"], q["qat_epochs"], ds, cp, q["qat_lr"], seed, k)
    models["pruned"], _ = pipeline_run(baseline, prune_schedule(cfg), 32, 0, ds, cp, q["qat_lr"], seed, k)
    models["pruned+quantized"], _ = pipeline_run(baseline, prune_schedule(cfg), q["bits"],
                                                 q["qat_epochs"], ds, cp, q["qat_lr"], seed, k)
    models["distilled"], _ = run_distill(cfg, baseline, ds)
    rows = []
    base_macs = None
    for name in VARIANTS:
        r = _row(name, models[name], cp, ds, k)
        base_macs = r["macs"] if name == "baseline" else base_macs
        r["sim_throughput_rps"] = sim_throughput(cfg, cp, r["macs"] / base_macs, models[name])
        rows.append(r)
    student_frac = rows[-1]["params"] / rows[0]["params"]
    notes = {
        "eval_k": k,
        "student_param_fraction": student_frac,
        "student_param_reduction": 1 - student_frac,
        "distill_note": ("student sized to 20% of the baseline tower weights (80% fewer); "
                         "set distill.param_fraction=0.7 for a 30%-fewer student"),
        "distilled_bits_note": "half precision realized as 16-bit dynamic-range quantization",
    }
    return BenchmarkMatrix(rows, notes), models


def measure_latencies(models: dict, dataset: Dataset, repeats: int = 5) -> dict:
    """Wall-clock desk latency (ms) of scoring one request per variant.

    Kept out of the report body: wall-clock numbers are not reproducible.
    """
    te = dataset.test()
    seq, cands = te.seq[:1], te.cands[:1]
    return {name: time_call(lambda m=m: forward_batch(m, seq, cands), repeats)
            for name, m in models.items()}
