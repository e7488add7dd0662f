"""``recaccel`` command line.

Every subcommand resolves its configuration as built-in defaults, then the
``--config`` JSON file, then ``--set key.path=value`` overrides (values parsed
as JSON when possible), then ``--seed``.  Outputs go to
``<out root>/<command>-<hash12>/`` together with a ``manifest.json`` holding the
resolved config, its hash, the seed, library versions and output checksums.
The out root is ``--out``, else ``$RECACCEL_OUT``, else ``runs``.

Exit codes: 0 success, 1 numeric failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import sklearn

from . import __version__
from .bench import (
    BenchmarkMatrix, DEFAULT_CONFIG, emit_report, make_dataset, measure_latencies, prune_schedule,
    resolve_config, run_benchmark, run_distill, train_baseline,
)
from .compress import pipeline_run, prune_loop, qat_train, quantize_model
from .cost import CostParams
from .data import Dataset
from .exceptions import NumericError, RecAccelError
from .io import load_model, model_checksum, save_model
from .metrics import evaluate
from .sim import Scenario, simulate, write_metrics

COMMANDS = ("gen-data", "train", "prune", "quantize", "pipeline", "distill", "bench", "simulate",
            "report")
ENV_OUT = "RECACCEL_OUT"


class UsageError(RecAccelError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="recaccel", description="Compress, distill, benchmark and simulate rankers.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output root directory")
        s.add_argument("--format", choices=("csv", "json"), default="json")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. prune.p_target=0.3")
        if name in ("train", "prune", "quantize", "pipeline", "distill"):
            s.add_argument("--dataset", help="dataset JSONL (generated from config if omitted)")
        if name in ("prune", "quantize", "pipeline"):
            s.add_argument("--model", required=True, help="model header path")
        if name == "distill":
            s.add_argument("--teacher", required=True, help="teacher model header path")
        if name == "bench":
            s.add_argument("--desk-latency", action="store_true",
                           help="also time each variant (written outside the report)")
        if name == "report":
            s.add_argument("--input", required=True, help="matrix.json from a bench run")
    return p


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, pairs) -> dict:
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise UsageError(f"unknown config section in {key!r}")
            node = node[part]
        node[parts[-1]] = _parse_value(value)
    return cfg


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


def _check_keys(cfg: dict, ref: dict, where: str = "") -> None:
    for k, v in cfg.items():
        if k not in ref:
            raise UsageError(f"unknown config field {where}{k!r}")
        if isinstance(v, dict) and isinstance(ref[k], dict):
            _check_keys(v, ref[k], f"{where}{k}.")


def resolve(args) -> dict:
    if args.command == "simulate":
        cfg = _read_json(args.config) if args.config else {"duration_s": 10.0}
    else:
        cfg = resolve_config(_read_json(args.config) if args.config else {})
        _check_keys(cfg, DEFAULT_CONFIG)
    cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.command != "simulate":
        _check_keys(cfg, DEFAULT_CONFIG)
    return cfg


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input_digests(args) -> dict:
    out = {}
    for flag in ("dataset", "model", "teacher", "input"):
        path = getattr(args, flag, None)
        if path:
            p = Path(path)
            if flag in ("model", "teacher"):
                p = p.with_suffix(".json")
                out[flag] = {"header": _sha256_file(p), "blob": _sha256_file(p.with_suffix(".bin"))}
            else:
                out[flag] = _sha256_file(p)
    return out


def versions() -> dict:
    return {"recaccel": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scikit-learn": sklearn.__version__}


def _dump(obj, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _dataset(args, cfg) -> Dataset:
    if getattr(args, "dataset", None):
        return Dataset.from_jsonl(args.dataset)
    return make_dataset(cfg)


def _load(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise UsageError(f"cannot read model {path}: {exc}") from exc


# -- subcommands ----------------------------------------------------------------
def cmd_gen_data(args, cfg, run: Path) -> list:
    ds = make_dataset(cfg)
    path = run / "dataset.jsonl"
    ds.to_jsonl(path)
    return [path]


def cmd_train(args, cfg, run: Path) -> list:
    ds = _dataset(args, cfg)
    model, hist = train_baseline(cfg, ds)
    paths = list(save_model(model, run / "model"))
    rep = {"history": hist, "eval": evaluate(model, ds.test(), cfg["eval"]["k"]).to_dict(),
           "checksum": model_checksum(model)}
    paths.append(_dump(rep, run / "report.json"))
    return paths


def cmd_prune(args, cfg, run: Path) -> list:
    ds = _dataset(args, cfg)
    model, hist = prune_loop(_load(args.model), prune_schedule(cfg), ds, seed=cfg["seed"],
                             eval_k=cfg["eval"]["k"])
    paths = list(save_model(model, run / "model"))
    paths.append(_dump({"rounds": hist, "checksum": model_checksum(model)}, run / "report.json"))
    return paths


def cmd_quantize(args, cfg, run: Path) -> list:
    ds = _dataset(args, cfg)
    q = cfg["quantize"]
    model = _load(args.model)
    hist = []
    if q["qat_epochs"] > 0:
        model, hist = qat_train(model, ds, q["bits"], q["qat_epochs"], lr=q["qat_lr"],
                                batch_size=cfg["train"]["batch_size"], seed=cfg["seed"])
    else:
        quantize_model(model, q["bits"])
    paths = list(save_model(model, run / "model"))
    rep = {"qat_history": hist,
           "quant_params": {n: qp.to_dict() for n, qp in sorted(model.qparams.items())},
           "eval": evaluate(model, ds.test(), cfg["eval"]["k"]).to_dict(),
           "checksum": model_checksum(model)}
    paths.append(_dump(rep, run / "report.json"))
    return paths


def cmd_pipeline(args, cfg, run: Path) -> list:
    ds = _dataset(args, cfg)
    q = cfg["quantize"]
    model = _load(args.model)
    out, rep = pipeline_run(model, prune_schedule(cfg), q["bits"], q["qat_epochs"], ds,
                            CostParams(**cfg["cost"]), q["qat_lr"], cfg["seed"], cfg["eval"]["k"])
    rep["checksum_before"] = model_checksum(model)
    rep["checksum_after"] = model_checksum(out)
    paths = list(save_model(out, run / "model"))
    paths.append(_dump(rep, run / "report.json"))
    return paths


def cmd_distill(args, cfg, run: Path) -> list:
    ds = _dataset(args, cfg)
    teacher = _load(args.teacher)
    student, hist = run_distill(cfg, teacher, ds)
    from .model import count_attention_params, count_stored_params
    t_size = count_stored_params(teacher)
    s_size = count_stored_params(student)
    rep = {"history": hist, "teacher_params": t_size, "student_params": s_size,
           "param_ratio": s_size / t_size,
           "attention_param_ratio": count_attention_params(student) / max(1, count_attention_params(teacher)),
           "eval": evaluate(student, ds.test(), cfg["eval"]["k"]).to_dict(),
           "checksum": model_checksum(student)}
    paths = list(save_model(student, run / "model"))
    paths.append(_dump(rep, run / "report.json"))
    return paths


def cmd_bench(args, cfg, run: Path) -> list:
    matrix, models = run_benchmark(cfg)
    paths = [_dump(matrix.to_dict(), run / "matrix.json")]
    report = run / f"report.{args.format}"
    report.write_text(emit_report(matrix, args.format))
    paths.append(report)
    if args.desk_latency:
        lat = measure_latencies(models, make_dataset(resolve_config(cfg)))
        _dump({"desk_latency_ms": lat, "nondeterministic": True}, run / "desk_latency.json")
    return paths


def cmd_simulate(args, cfg, run: Path) -> list:
    scenario = Scenario.from_dict(cfg)
    rep, reqs = simulate(scenario, return_requests=True)
    return list(write_metrics(rep, reqs, run, scenario))


def cmd_report(args, cfg, run: Path) -> list:
    data = _read_json(args.input)
    matrix = BenchmarkMatrix.from_dict(data)
    path = run / f"report.{args.format}"
    path.write_text(emit_report(matrix, args.format))
    return [path]


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "prune": cmd_prune,
            "quantize": cmd_quantize, "pipeline": cmd_pipeline, "distill": cmd_distill,
            "bench": cmd_bench, "simulate": cmd_simulate, "report": cmd_report}


def config_hash(command: str, cfg: dict, inputs: dict, fmt: str) -> str:
    blob = json.dumps({"command": command, "config": cfg, "inputs": inputs, "format": fmt},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def run_command(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        inputs = _input_digests(args)
    except (UsageError, RecAccelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    digest = config_hash(args.command, cfg, inputs, args.format)
    root = Path(args.out or os.environ.get(ENV_OUT, "runs"))
    run = root / f"{args.command}-{digest[:12]}"
    run.mkdir(parents=True, exist_ok=True)
    try:
        outputs = HANDLERS[args.command](args, cfg, run)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1
    except (UsageError, RecAccelError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    manifest = {
        "command": args.command,
        "config": cfg,
        "config_hash": digest,
        "seed": cfg.get("seed"),
        "format": args.format,
        "inputs": inputs,
        "versions": versions(),
        "outputs": {p.name: _sha256_file(p) for p in sorted(outputs)},
    }
    _dump(manifest, run / "manifest.json")
    print(run)
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
