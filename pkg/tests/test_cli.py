import json

import numpy as np
import pytest

from figrat.cli import main
from figrat.graphs import load_jsonl

TINY = {"d": 8, "r": 4, "encoder_layers": 2, "batch_size": 8, "max_epochs": 2}


@pytest.fixture
def data_dir(tmp_path):
    assert main(["gen-data", "--num-graphs", "24", "--out", str(tmp_path / "train.jsonl"), "--seed", "1"]) == 0
    assert main(["gen-data", "--num-graphs", "10", "--out", str(tmp_path / "val.jsonl"), "--seed", "2"]) == 0
    (tmp_path / "cfg.json").write_text(json.dumps(TINY))
    return tmp_path


def train_args(d, out="ck.json", *extra):
    return ["train", "--train", str(d / "train.jsonl"), "--val", str(d / "val.jsonl"), "--out", str(d / out),
            "--config", str(d / "cfg.json"), *extra]


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 1


def test_unknown_flag_is_usage_error(capsys):
    assert main(["train", "--bogus"]) == 1
    assert main(["nonsense"]) == 1


def test_gen_data_writes_lines(data_dir):
    lines = (data_dir / "val.jsonl").read_text().splitlines()
    assert len(lines) == 10 and all(json.loads(l)["n"] >= 8 for l in lines)
    assert len(load_jsonl(data_dir / "val.jsonl")) == 10


def test_gen_data_bad_range(tmp_path, capsys):
    assert main(["gen-data", "--num-graphs", "3", "--out", str(tmp_path / "x.jsonl"), "--env-min", "1"]) == 2


def test_missing_files_are_data_errors(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.json"), "--data", str(tmp_path / "none.jsonl")]) == 2
    assert "none.json" in capsys.readouterr().err


def test_malformed_data_is_data_error(data_dir, capsys):
    (data_dir / "bad.jsonl").write_text("{oops\n")
    args = train_args(data_dir)
    args[2] = str(data_dir / "bad.jsonl")
    assert main(args) == 2


def test_bad_config_is_error(data_dir, capsys):
    (data_dir / "cfg.json").write_text(json.dumps({"lr": -1}))
    assert main(train_args(data_dir)) == 2
    (data_dir / "cfg.json").write_text(json.dumps({"unknown_field": 1}))
    assert main(train_args(data_dir)) == 2


def test_train_eval_export_pipeline(data_dir, capsys):
    assert main(train_args(data_dir, "ck.json", "--log", str(data_dir / "log.jsonl"), "--seed", "3")) == 0
    log = [json.loads(l) for l in (data_dir / "log.jsonl").read_text().splitlines()]
    assert [e["epoch"] for e in log] == [1, 2]
    ck = json.loads((data_dir / "ck.json").read_text())
    assert ck["config"]["seed"] == 3 and ck["config"]["d"] == 8 and "best_epoch" in ck["extra"]
    capsys.readouterr()

    assert main(["eval", "--checkpoint", str(data_dir / "ck.json"), "--data", str(data_dir / "val.jsonl"),
                 "--recovery"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 0 <= out["accuracy"] <= 1 and out["n_samples"] == 10 and "precision_at_K" in out

    csv_path = data_dir / "att.csv"
    assert main(["export-attention", "--checkpoint", str(data_dir / "ck.json"), "--data",
                 str(data_dir / "val.jsonl"), "--index", "2", "--out", str(csv_path)]) == 0
    P = np.loadtxt(csv_path, delimiter=",")
    assert P.shape[0] == P.shape[1] == load_jsonl(data_dir / "val.jsonl")[2].n
    assert csv_path.with_suffix(".json").exists()

    assert main(["export-attention", "--checkpoint", str(data_dir / "ck.json"), "--data",
                 str(data_dir / "val.jsonl"), "--index", "99", "--out", str(csv_path)]) == 2


def test_cli_training_is_deterministic(data_dir, capsys):
    for name in ("a", "b"):
        assert main(train_args(data_dir, f"{name}.json", "--log", str(data_dir / f"{name}.jsonl"))) == 0
    assert (data_dir / "a.json").read_bytes() == (data_dir / "b.json").read_bytes()
    assert (data_dir / "a.jsonl").read_bytes() == (data_dir / "b.jsonl").read_bytes()


def test_grad_check_seed_one(capsys):
    assert main(["grad-check", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out and "pass" in out


def test_grad_check_failure_exit_code(capsys):
    assert main(["grad-check", "--seed", "1", "--tol", "0"]) == 3


def test_reg_effect_cli(data_dir, capsys):
    out = data_dir / "reg.csv"
    (data_dir / "cfg.json").write_text(json.dumps({**TINY, "max_epochs": 1}))
    assert main(["reg-effect", "--seeds", "0,1,2", "--sizes", "12,6,6", "--out", str(out), "--config",
                 str(data_dir / "cfg.json")]) == 0
    assert len(out.read_text().splitlines()) == 7
    assert main(["reg-effect", "--seeds", "0,1", "--out", str(out)]) == 2
