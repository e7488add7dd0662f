import json
from pathlib import Path

import pytest

from recaccel.cli import run_command

SMALL = {"data": {"users": 30, "items": 120, "events_per_user": 4, "m": 10, "seq_len": 6},
         "model": {"d_e": 8, "h": 16, "depth": 2}, "train": {"epochs": 1},
         "prune": {"rounds": 2}, "distill": {"epochs": 1, "depth": 1}}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def _run(argv, capsys):
    code = run_command(argv)
    out = capsys.readouterr().out.strip()
    return code, Path(out) if code == 0 else None


def test_train_pipeline_identity(tmp_path, cfg, capsys):
    out = str(tmp_path / "runs")
    code, train = _run(["train", "--config", str(cfg), "--out", out], capsys)
    assert code == 0 and (train / "model.json").exists()
    code, pipe = _run(["pipeline", "--config", str(cfg), "--out", out, "--model",
                       str(train / "model.json"), "--set", "prune.p_target=0",
                       "--set", "quantize.bits=32", "--set", "quantize.qat_epochs=0"], capsys)
    assert code == 0
    rep = json.loads((pipe / "report.json").read_text())
    assert rep["checksum_before"] == rep["checksum_after"]
    manifest = json.loads((pipe / "manifest.json").read_text())
    assert manifest["config"]["prune"]["p_target"] == 0
    assert set(manifest["versions"]) >= {"numpy", "python", "recaccel"}


def test_subcommands_chain(tmp_path, cfg, capsys):
    out = str(tmp_path / "runs")
    code, data = _run(["gen-data", "--config", str(cfg), "--out", out], capsys)
    ds = str(data / "dataset.jsonl")
    code, train = _run(["train", "--config", str(cfg), "--out", out, "--dataset", ds], capsys)
    model = str(train / "model.json")
    for cmd, flag in (("prune", "--model"), ("quantize", "--model"), ("distill", "--teacher")):
        code, run = _run([cmd, "--config", str(cfg), "--out", out, "--dataset", ds, flag, model], capsys)
        assert code == 0, cmd
        assert (run / "model.bin").exists() and (run / "manifest.json").exists()


def test_bench_and_report(tmp_path, cfg, capsys):
    out = str(tmp_path / "runs")
    code, bench = _run(["bench", "--config", str(cfg), "--out", out, "--format", "csv"], capsys)
    assert code == 0
    lines = (bench / "report.csv").read_text().splitlines()
    assert len(lines) == 6 and lines[1].startswith("baseline,")
    code, rep = _run(["report", "--input", str(bench / "matrix.json"), "--out", out], capsys)
    data = json.loads((rep / "report.json").read_text())
    rows = {r["variant"]: r for r in data["rows"]}
    assert rows["quantized"]["storage_bytes_ratio"] == 0.25
    assert all(v == 1.0 for k, v in rows["baseline"].items() if k.endswith("_ratio"))


def test_simulate_and_env_root(tmp_path, monkeypatch, capsys):
    sc = tmp_path / "sc.json"
    sc.write_text(json.dumps({"duration_s": 2, "arrival": {"kind": "poisson", "rate": 20}}))
    monkeypatch.setenv("RECACCEL_OUT", str(tmp_path / "envroot"))
    code, run = _run(["simulate", "--config", str(sc), "--seed", "3"], capsys)
    assert code == 0 and run.parent == tmp_path / "envroot"
    assert (run / "requests.csv").exists()
    assert json.loads((run / "manifest.json").read_text())["seed"] == 3


def test_rerun_is_byte_identical(tmp_path, cfg, capsys):
    a = tmp_path / "a"
    b = tmp_path / "b"
    _, ra = _run(["train", "--config", str(cfg), "--out", str(a)], capsys)
    _, rb = _run(["train", "--config", str(cfg), "--out", str(b)], capsys)
    for name in ("manifest.json", "report.json", "model.json", "model.bin"):
        assert (ra / name).read_bytes() == (rb / name).read_bytes()


@pytest.mark.parametrize("argv", [["train", "--bogus"], ["nope"], ["prune"],
                                  ["train", "--set", "model.zzz=1"], ["train", "--set", "noequals"]])
def test_usage_errors(argv, tmp_path, capsys):
    assert run_command(argv + ["--out", str(tmp_path)] if argv != ["nope"] else argv) == 2


def test_malformed_config(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run_command(["train", "--config", str(p), "--out", str(tmp_path)]) == 2
    p.write_text(json.dumps({"duration_s": 1, "fleet": {"bogus": 1}}))
    assert run_command(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_incomplete_matrix(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"rows": [{"variant": "baseline", "params": 1}]}))
    assert run_command(["report", "--input", str(p), "--out", str(tmp_path)]) == 2


def test_numeric_failure_exit_code(tmp_path, cfg, capsys):
    import numpy as np
    out = str(tmp_path / "runs")
    _, train = _run(["train", "--config", str(cfg), "--out", out], capsys)
    with np.errstate(all="ignore"):
        code = run_command(["prune", "--config", str(cfg), "--out", out, "--model",
                            str(train / "model.json"), "--set", "prune.lr=1e200"])
    assert code == 1
