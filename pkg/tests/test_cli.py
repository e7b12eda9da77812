import csv
import subprocess
import sys

import numpy as np
import pytest
from click.testing import CliRunner

from nlidguard.cli import main
from nlidguard.data import load_csv, split, synth_linear


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    result = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result.output


@pytest.fixture
def train_val(tmp_path):
    train, val = split(synth_linear(150, 4, 0.05, 0), 0.25, 1)
    train.to_csv(tmp_path / "train.csv")
    val.to_csv(tmp_path / "val.csv")
    return tmp_path / "train.csv", tmp_path / "val.csv"


def test_synth_writes_csv_and_truth(runner, tmp_path):
    out = tmp_path / "s.csv"
    invoke(runner, "synth", "--n", 40, "--d", 3, "--seed", 2, "--out", out)
    assert load_csv(out, "target").n == 40
    assert out.with_suffix(".truth.json").exists()


def test_attack_defend_evaluate_pipeline(runner, train_val, tmp_path):
    train, val = train_val
    invoke(runner, "attack", "--train", train, "--validation", val, "--max-iters", 2, "--out", tmp_path / "atk")
    contaminated = tmp_path / "atk" / "contaminated.csv"
    labels = tmp_path / "atk" / "poisoned_indices.csv"
    assert load_csv(contaminated, "target").n == 112 + 28
    invoke(runner, "defend", "--train", contaminated, "--defense", "nlid_cvx", "--k", 10, "--out", tmp_path / "cvx")
    beta = np.loadtxt(tmp_path / "cvx" / "weights.csv", skiprows=1)
    assert beta.shape == (140,) and beta.min() >= 0 and beta.max() <= 1
    invoke(runner, "defend", "--train", contaminated, "--defense", "nlid_lr", "--labels", labels, "--k", 10,
           "--out", tmp_path / "lr")
    out = invoke(runner, "evaluate", "--model", tmp_path / "cvx" / "model.txt", "--data", val,
                 "--normalizer", tmp_path / "atk" / "normalizer.json")
    assert float(out) >= 0


def test_defend_lr_requires_labels(runner, train_val, tmp_path):
    result = runner.invoke(main, ["defend", "--train", str(train_val[0]), "--defense", "nlid_lr",
                                  "--out", str(tmp_path / "x")])
    assert result.exit_code != 0 and "--labels" in result.output


def test_sweep_with_yaml_and_overrides(runner, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("synth: {n: 100, d: 3, seed: 0}\nrates: [0.0, 0.2]\nmax_iters: 2\nk: 10\n")
    invoke(runner, "sweep", "--config", cfg, "--defenses", "nlid_cvx,trim", "--out", tmp_path / "rep")
    with open(tmp_path / "rep" / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["defense"] for r in rows} == {"ridge", "nlid_cvx", "trim"}
    assert len(rows) == 3 * 2 * 5


def test_sweep_on_csv_dataset(runner, machine_csv, tmp_path):
    invoke(runner, "sweep", "--dataset", machine_csv, "--response-column", "perf", "--rates", "0.2",
           "--defenses", "nlid_cvx", "--max-iters", 2, "--k", 20, "--out", tmp_path / "m")
    assert (tmp_path / "m" / "summary.csv").exists()


def test_tune_k_prints_grid_value(runner, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("synth: {n: 80, d: 3, seed: 0}\nmax_iters: 2\n")
    out = invoke(runner, "tune-k", "--config", cfg, "--k-grid", "10,20")
    assert int(out) in (10, 20)


def test_bad_input_exits_nonzero(tmp_path):
    (tmp_path / "bad.csv").write_text("a,target\n1,x\n")
    proc = subprocess.run([sys.executable, "-m", "nlidguard.cli", "defend", "--train", str(tmp_path / "bad.csv"),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "error:" in proc.stderr and "row 2" in proc.stderr
