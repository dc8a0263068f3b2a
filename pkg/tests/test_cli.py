"""CLI contract: exit codes, artifact layout, digests, stage-tagged logs."""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from traceweights.cli import main
from traceweights.config import load_run_config
from traceweights.codec import WeightsMatrix, matrix_to_coefficients
from traceweights.datasets import read_dataset
from traceweights.device import write_trace_container
from traceweights.mlp import init_mlp, model_to_dict


TINY_CONFIG = {
    "scale": "desk",
    "master_seed": 11,
    "device": {
        "adc_bits": 12,
        "adc_lo": 0.0,
        "adc_hi": 42.0,
        "noise_sigma": 0.15,
        "static_power": 5.0,
        "dynamic_scale": 1.0,
        "samples_per_mac": 1,
        "fixed_point_bits": 16,
        "fixed_point_frac_bits": 4,
        "rng_seed": 0,
    },
    "tasks": [{"preset": "binary-narrow", "hidden": [4], "dsmall_size": 12}],
    "phase1": {
        "chunks": 2,
        "reps": 18,
        "pool_size": 60,
        "pca_k": 16,
        "theta": 0.0,
        "splits": [0.75, 0.2, 0.05],
        "surrogate": {"epochs": 2, "batch_size": 8, "lr": 0.01, "dropout": 0.3},
        "ednn": {"epochs": 2, "batch_size": 9, "lr": 0.001, "tau": 0.05},
    },
    "finetune": {
        "epochs_max": 4,
        "batch_size": 8,
        "lr": 0.01,
        "dropout": 0.3,
        "early_stop_patience": 10,
        "lr_halve_after": 5,
        "val_frac": 0.25,
        "restore_best": True,
    },
    "experiment": {
        "seeds": 2,
        "modes": ["balanced"],
        "eval_pool_size": 120,
        "test_frac": 0.2,
        "target": {"epochs": 3, "batch_size": 16, "lr": 0.01, "dropout": 0.3},
    },
}

# binary-narrow with hidden [4]: topology (9, 4, 1), one sample per MAC
TRACE_LEN = (9 + 1) * 4 + (4 + 1) * 1


@pytest.fixture(scope="module")
def cli_root(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def tiny_cfg(cli_root):
    path = cli_root / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG, indent=2))
    return str(path)


@pytest.fixture(scope="module")
def tiny_digest(tiny_cfg):
    return load_run_config(tiny_cfg).digest


@pytest.fixture(scope="module")
def run_dir(cli_root, tiny_cfg):
    out = cli_root / "run"
    rc = main(["train-ednn", "--config", tiny_cfg, "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def data_dir(cli_root, tiny_cfg):
    out = cli_root / "data"
    rc = main(["gen-data", "--config", tiny_cfg, "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def victim_path(cli_root):
    model = init_mlp((9, 4, 1), seed=3)
    path = cli_root / "victim.json"
    path.write_text(json.dumps(model_to_dict(model)))
    return str(path)


@pytest.fixture(scope="module")
def extract_dir(cli_root, tiny_cfg, run_dir, victim_path):
    out = cli_root / "extract"
    rc = main(
        [
            "extract",
            "--config",
            tiny_cfg,
            "--run",
            str(run_dir),
            "--model",
            victim_path,
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    return out


def test_validate_config_shipped_desk_exits_zero(capsys):
    assert main(["validate-config"]) == 0
    out = capsys.readouterr()
    doc = json.loads(out.out)
    assert doc["valid"] is True
    assert len(doc["digest"]) == 16
    assert "stage=validate-config" in out.err


def test_validate_config_seed_override_changes_digest(capsys):
    assert main(["validate-config"]) == 0
    base = json.loads(capsys.readouterr().out)["digest"]
    assert main(["validate-config", "--seed", "99"]) == 0
    assert json.loads(capsys.readouterr().out)["digest"] != base


def test_console_script_entry_point():
    proc = subprocess.run(
        ["traceweights", "validate-config"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["valid"] is True


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["no-such-command"]) == 1
    assert main(["train-ednn"]) == 1  # --out is required
    assert main(["validate-config", "--seed", "notanint"]) == 1
    assert "stage=usage" in capsys.readouterr().err


def test_config_errors_exit_two(tmp_path, capsys):
    missing = tmp_path / "absent.json"
    assert main(["validate-config", "--config", str(missing)]) == 2

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate-config", "--config", str(bad)]) == 2

    unknown = tmp_path / "unknown.json"
    doc = json.loads(json.dumps(TINY_CONFIG))
    doc["device"]["adc_speed"] = 1
    unknown.write_text(json.dumps(doc))
    assert main(["validate-config", "--config", str(unknown)]) == 2
    err = capsys.readouterr().err
    assert "stage=validate-config" in err
    assert "adc_speed" in err


def test_unknown_task_name_exits_two(tiny_cfg, tmp_path, capsys):
    rc = main(
        [
            "gen-data",
            "--config",
            tiny_cfg,
            "--task",
            "no-such-task",
            "--out",
            str(tmp_path / "out"),
        ]
    )
    assert rc == 2
    assert "no task named" in capsys.readouterr().err


def test_gen_data_writes_dataset_with_digest(data_dir, tiny_digest):
    ds = read_dataset(data_dir)
    assert ds.n == TINY_CONFIG["phase1"]["pool_size"]
    assert ds.d == 9 and ds.n_classes == 2
    meta = json.loads((data_dir / "data.json").read_text())
    assert meta["config_digest"] == tiny_digest


def test_gen_data_n_flag_overrides_count(cli_root, tiny_cfg):
    out = cli_root / "data24"
    assert main(["gen-data", "--config", tiny_cfg, "--n", "24", "--out", str(out)]) == 0
    assert read_dataset(out).n == 24


def test_gen_data_csv_roundtrip(cli_root, tiny_cfg, capsys):
    csv = cli_root / "toy.csv"
    csv.write_text("a,b,label\n0.0,1.0,0\n2.0,3.0,1\n4.0,5.0,1\n1.0,0.0,0\n")
    out = cli_root / "csvdata"
    rc = main(
        [
            "gen-data",
            "--config",
            tiny_cfg,
            "--csv",
            str(csv),
            "--label-column",
            "label",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    ds = read_dataset(out)
    assert ds.n == 4 and ds.d == 2 and ds.n_classes == 2

    rc = main(
        ["gen-data", "--config", tiny_cfg, "--csv", str(csv), "--out", str(cli_root / "x")]
    )
    assert rc == 2
    assert "--label-column" in capsys.readouterr().err


def test_prepare_pairs_writes_containers(cli_root, tiny_cfg, tiny_digest):
    out = cli_root / "pairs_run"
    rc = main(["prepare-pairs", "--config", tiny_cfg, "--out", str(out)])
    assert rc == 0
    fixed = json.loads((out / "fixed_input.json").read_text())
    assert fixed["config_digest"] == tiny_digest
    assert len(fixed["values"]) == 9
    meta = json.loads((out / "pairs" / "meta.json").read_text())
    assert meta["config_digest"] == tiny_digest
    assert meta["count"] == TINY_CONFIG["phase1"]["reps"]
    assert meta["trace_len"] == TRACE_LEN
    mats = json.loads((out / "pairs" / "matrices.json").read_text())
    assert (mats["rows"], mats["cols"]) == (5, 10)
    assert (out / "pairs" / "traces.f32").exists()
    assert (out / "pairs" / "matrices.f32").exists()


def test_train_ednn_run_dir_layout(run_dir, tiny_digest, capsys):
    for name in ("config.json", "fixed_input.json", "pairs", "pca.json", "ednn.json"):
        assert (run_dir / name).exists()
    cfg_copy = json.loads((run_dir / "config.json").read_text())
    assert cfg_copy["config_digest"] == tiny_digest
    assert cfg_copy["master_seed"] == 11
    ednn_meta = json.loads((run_dir / "ednn.json").read_text())
    assert ednn_meta["config_digest"] == tiny_digest


def test_extract_from_model_writes_matrix(extract_dir, run_dir, tiny_digest):
    doc = json.loads((extract_dir / "extracted_matrix.json").read_text())
    assert doc["config_digest"] == tiny_digest
    fixed = json.loads((run_dir / "fixed_input.json").read_text())
    assert doc["fixed_digest"] == fixed["digest"]
    matrix = WeightsMatrix.from_json_dict(
        {k: doc[k] for k in ("rows", "cols", "topology", "data")}
    )
    assert matrix.topology == (9, 4, 1)
    decoded = matrix_to_coefficients(matrix, matrix.topology)
    assert decoded.weights[0].shape == (9, 4) and decoded.biases[1].shape == (1,)


def test_extract_from_trace_container(cli_root, tiny_cfg, run_dir):
    tr_dir = cli_root / "trace_ok"
    write_trace_container(tr_dir, np.zeros((2, TRACE_LEN)), {"rng_seed": 0})
    out = cli_root / "extract_trace"
    rc = main(
        [
            "extract",
            "--config",
            tiny_cfg,
            "--run",
            str(run_dir),
            "--trace",
            str(tr_dir),
            "--trace-index",
            "1",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    doc = json.loads((out / "extracted_matrix.json").read_text())
    assert len(doc["data"]) == 5 and len(doc["data"][0]) == 10


def test_extract_length_mismatch_exits_two_naming_topology(
    cli_root, tiny_cfg, run_dir, capsys
):
    tr_dir = cli_root / "trace_bad"
    write_trace_container(tr_dir, np.zeros((1, TRACE_LEN + 1)), {"rng_seed": 0})
    rc = main(
        [
            "extract",
            "--config",
            tiny_cfg,
            "--run",
            str(run_dir),
            "--trace",
            str(tr_dir),
            "--out",
            str(cli_root / "extract_bad"),
        ]
    )
    assert rc == 2
    err = capsys.readouterr().err
    assert "stage=extract" in err
    assert "violates topology" in err
    assert "(9, 4, 1)" in err


def test_extract_needs_exactly_one_source(cli_root, tiny_cfg, run_dir, victim_path, capsys):
    tr_dir = cli_root / "trace_ok"
    base = [
        "extract",
        "--config",
        tiny_cfg,
        "--run",
        str(run_dir),
        "--out",
        str(cli_root / "extract_dup"),
    ]
    assert main(base + ["--model", victim_path, "--trace", str(tr_dir)]) == 2
    assert main(base) == 2
    assert "exactly one of --model or --trace" in capsys.readouterr().err


def test_extract_nonfinite_trace_exits_three(cli_root, tiny_cfg, run_dir, capsys):
    tr_dir = cli_root / "trace_nan"
    write_trace_container(tr_dir, np.full((1, TRACE_LEN), np.nan), {"rng_seed": 0})
    rc = main(
        [
            "extract",
            "--config",
            tiny_cfg,
            "--run",
            str(run_dir),
            "--trace",
            str(tr_dir),
            "--out",
            str(cli_root / "extract_nan"),
        ]
    )
    assert rc == 3
    err = capsys.readouterr().err
    assert "stage=extract" in err
    assert "NumericalError" in err


def test_finetune_writes_model_and_curves(cli_root, tiny_cfg, extract_dir, data_dir, tiny_digest):
    out = cli_root / "finetuned"
    rc = main(
        [
            "finetune",
            "--config",
            tiny_cfg,
            "--matrix",
            str(extract_dir / "extracted_matrix.json"),
            "--data",
            str(data_dir),
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    doc = json.loads((out / "final_model.json").read_text())
    assert doc["config_digest"] == tiny_digest
    assert doc["topology"] == [9, 4, 1]
    curves = (out / "curves.csv").read_text().splitlines()
    assert curves[0] == "epoch,split,accuracy"
    assert len(curves) > 1


def test_finetune_epochs_override_zero_keeps_decoded_model(
    cli_root, tiny_cfg, extract_dir, data_dir
):
    out = cli_root / "finetuned0"
    rc = main(
        [
            "finetune",
            "--config",
            tiny_cfg,
            "--matrix",
            str(extract_dir / "extracted_matrix.json"),
            "--data",
            str(data_dir),
            "--epochs-max",
            "0",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    doc = json.loads((out / "final_model.json").read_text())
    matrix_doc = json.loads((extract_dir / "extracted_matrix.json").read_text())
    matrix = WeightsMatrix.from_json_dict(
        {k: matrix_doc[k] for k in ("rows", "cols", "topology", "data")}
    )
    decoded = matrix_to_coefficients(matrix, matrix.topology)
    assert np.allclose(np.asarray(doc["weights"][0]), decoded.weights[0])
    assert (out / "curves.csv").read_text() == "epoch,split,accuracy\n"


def test_evaluate_prints_metrics(cli_root, tiny_cfg, victim_path, data_dir, capsys):
    rc = main(
        ["evaluate", "--config", tiny_cfg, "--model", victim_path, "--data", str(data_dir)]
    )
    assert rc == 0
    out = capsys.readouterr()
    doc = json.loads(out.out)
    assert 0.0 <= doc["accuracy"] <= 1.0
    assert 0.0 <= doc["f1"] <= 1.0
    assert "config_digest" in doc
    assert "stage=evaluate" in out.err

    metrics_out = cli_root / "metrics"
    rc = main(
        [
            "evaluate",
            "--config",
            tiny_cfg,
            "--model",
            victim_path,
            "--data",
            str(data_dir),
            "--out",
            str(metrics_out),
        ]
    )
    assert rc == 0
    capsys.readouterr()
    written = json.loads((metrics_out / "metrics.json").read_text())
    assert written["accuracy"] == doc["accuracy"]


def test_experiment_tiny_end_to_end(cli_root, tiny_cfg, tiny_digest, capsys):
    out = cli_root / "exp"
    rc = main(["experiment", "--config", tiny_cfg, "--out", str(out)])
    assert rc == 0
    assert "stage=experiment" in capsys.readouterr().err
    for name in ("config.json", "report.json", "summary.csv", "curves.csv"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["config_digest"] == tiny_digest
    assert report["seeds"] == 2
    task = report["tasks"]["binary-narrow"]
    assert set(task["modes"]) == {"balanced"}
    assert len(task["modes"]["balanced"]["per_seed"]) == 2


def test_no_writes_outside_out(cli_root, tiny_cfg, tmp_path, monkeypatch):
    scratch = tmp_path / "scratch"
    scratch.mkdir()
    monkeypatch.chdir(scratch)

    def snapshot():
        trees = []
        for root in (scratch, Path(tiny_cfg).parent):
            trees.extend(
                p.relative_to(root).as_posix()
                for p in sorted(root.rglob("*"))
                if "out_only" not in p.parts
            )
        return trees

    before = snapshot()
    out = scratch / "out_only"
    rc = main(["prepare-pairs", "--config", tiny_cfg, "--out", str(out)])
    assert rc == 0
    assert snapshot() == before
    assert (out / "fixed_input.json").exists()
