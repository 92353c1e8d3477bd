import json
import pathlib

import numpy as np
import pytest

from branchfluct import canonical
from branchfluct.cli import main
from branchfluct.modelfile import model_document, save_model_file

MODELS = pathlib.Path(__file__).resolve().parent.parent / "models"


def _model_path(name):
    return str(MODELS / f"{name}.json")


def test_analyze_writes_report(tmp_path, capsys):
    out = tmp_path / "a"
    code = main(["analyze", "--model", _model_path("model_s"), "--out", str(out)])
    assert code == 0
    doc = json.loads((out / "analyze_report.json").read_text())
    assert doc["regime"] == "small"
    assert doc["m_L"] == 1 and doc["m_C"] == 1
    assert max(doc["spectral_resolution_residuals"]["residual"]) <= 1e-9
    assert "regime: " in capsys.readouterr().out


def test_analyze_missing_gamma_exits_2(tmp_path, capsys):
    model, _ = canonical.get_pair("model_y")
    doc = model_document(model)
    del doc["gamma"]
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(doc))
    code = main(["analyze", "--model", str(path), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "gamma" in capsys.readouterr().err


def test_unknown_field_exits_2(tmp_path, capsys):
    model, _ = canonical.get_pair("model_y")
    doc = model_document(model)
    doc["bogus"] = True
    path = tmp_path / "unknown.json"
    path.write_text(json.dumps(doc))
    code = main(["analyze", "--model", str(path), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_moments_csv_columns(tmp_path):
    out = tmp_path / "m"
    code = main([
        "moments", "--model", _model_path("model_y"), "--grid", "1",
        "--orders", "1,2", "--out", str(out),
    ])
    assert code == 0
    lines = (out / "moments.csv").read_text().strip().splitlines()
    assert lines[0] == "start_type,k,t,re,im,est_error"
    assert len(lines) == 3


def test_limits_csv(tmp_path):
    out = tmp_path / "l"
    code = main([
        "limits", "--model", _model_path("model_s"), "--grid", "0,1",
        "--functional", "1,0", "--out", str(out),
    ])
    assert code == 0
    lines = (out / "limit_kernel.csv").read_text().strip().splitlines()
    assert lines[0] == "r,t,re_plain,im_plain,re_conj,im_conj,est_error"
    assert len(lines) == 4  # pairs (0,0), (0,1), (1,1)


def test_limits_rejects_large_regime(tmp_path, capsys):
    code = main([
        "limits", "--model", _model_path("model_l"), "--out", str(tmp_path / "o"),
    ])
    assert code == 2


def test_simulate_reduced_and_replica_output(tmp_path):
    out1 = tmp_path / "s1"
    code = main([
        "simulate", "--model", _model_path("model_y"), "--grid", "1,2",
        "--seed", "5", "--replicas", "50", "--out", str(out1),
    ])
    assert code == 0
    lines = (out1 / "replicas.csv").read_text().strip().splitlines()
    assert lines[0] == "replica,time,count_a,capped"
    assert len(lines) == 101
    out2 = tmp_path / "s2"
    code = main([
        "simulate", "--model", _model_path("model_y"), "--grid", "1,2",
        "--seed", "5", "--replicas", "50", "--reduced", "--out", str(out2),
    ])
    assert code == 0
    assert (out2 / "reduced.csv").exists()


def test_simulate_byte_identical_reruns(tmp_path):
    outs = []
    for run in ("r1", "r2"):
        out = tmp_path / run
        main([
            "simulate", "--model", _model_path("model_s"), "--grid", "0.5,1",
            "--seed", "42", "--replicas", "200", "--engine", "ssa",
            "--out", str(out),
        ])
        outs.append((out / "replicas.csv").read_bytes())
    assert outs[0] == outs[1]


def test_env_var_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("BRANCHFLUCT_OUT", str(tmp_path / "root"))
    code = main(["moments", "--model", _model_path("model_y"), "--grid", "1"])
    assert code == 0
    assert (tmp_path / "root" / "moments" / "moments.csv").exists()


def test_pipeline_quick_profile(tmp_path):
    out = tmp_path / "p"
    code = main([
        "pipeline", "--model", _model_path("model_y"), "--seed", "3",
        "--replicas", "2000", "--out", str(out),
    ])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 3
    assert manifest["model_sha256"]
    report = json.loads((out / "verify_report.json").read_text())
    assert report["all_passed"] is True
    for fname in ("moments_sanity.csv", "population_summary.csv"):
        assert (out / fname).exists()
