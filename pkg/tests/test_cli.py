import json

import numpy as np
import pytest
from typer.testing import CliRunner

from main import app
from src.tensor_core import save_tensor
from src.synthgen import simulate_pair

runner = CliRunner()

GEN_ARGS = ["--n", "6", "--neighborhood", "2", "--confounders", "2", "--samples", "4",
            "--skeletons", "3", "--dim", "3", "--seed", "5"]


def _gen(out):
    result = runner.invoke(app, ["gen", "--out", str(out)] + GEN_ARGS)
    assert result.exit_code == 0, result.output
    return out


def test_gen_writes_dataset_and_config(tmp_path):
    out = _gen(tmp_path / "data")
    assert (out / "manifest.json").exists()
    run_config = json.loads((out / "run_config.json").read_text())
    assert run_config["command"] == "gen"
    assert run_config["config"]["n_observed"] == 6


def test_gen_grid_cell(tmp_path):
    result = runner.invoke(app, ["gen", "--out", str(tmp_path / "cell"), "--n", "20",
                                 "--pervasiveness", "0.1", "--confounders", "1", "--samples", "5"])
    assert result.exit_code == 0, result.output


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "bench.toml"
    cfg.write_text("[gen]\nn_observed = 7\nsamples_per_skeleton = 2\n", encoding="utf-8")
    out = tmp_path / "data"
    result = runner.invoke(app, ["gen", "--out", str(out), "--config", str(cfg), "--samples", "3"])
    assert result.exit_code == 0, result.output
    resolved = json.loads((out / "run_config.json").read_text())["config"]
    assert resolved["n_observed"] == 7
    assert resolved["samples_per_skeleton"] == 3


def test_invalid_config_exit_code(tmp_path):
    result = runner.invoke(app, ["gen", "--out", str(tmp_path / "x"), "--pervasiveness", "1.5"])
    assert result.exit_code == 2


def test_missing_data_exit_code(tmp_path):
    result = runner.invoke(app, ["eval", "--out", str(tmp_path / "r"), "--data", str(tmp_path / "none"),
                                 "--predictor", "oracle"])
    assert result.exit_code == 3
    assert (tmp_path / "r" / "run_config.json").exists()


def test_oracle_eval_is_perfect(tmp_path):
    data = _gen(tmp_path / "data")
    out = tmp_path / "report"
    result = runner.invoke(app, ["eval", "--out", str(out), "--data", str(data), "--predictor", "oracle",
                                 "--folds", "3"])
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["auroc"] == 1.0
    assert report["hd"] == 0.0
    assert (out / "report.txt").exists()


def _pipeline(root):
    data = _gen(root / "data")
    train = runner.invoke(app, ["train", "--out", str(root / "run"), "--data", str(data),
                                "--hidden-dim", "6", "--epochs", "2", "--batch-size", "4", "--lr", "0.001"])
    assert train.exit_code == 0, train.output
    evaluation = runner.invoke(app, ["eval", "--out", str(root / "report"), "--data", str(data),
                                     "--checkpoint", str(root / "run" / "checkpoint"), "--folds", "3"])
    assert evaluation.exit_code == 0, evaluation.output
    return (root / "report" / "report.json").read_bytes()


def test_pipeline_is_byte_identical(tmp_path):
    assert _pipeline(tmp_path / "first") == _pipeline(tmp_path / "second")


def test_pooled_training_and_evaluation(tmp_path):
    data = _gen(tmp_path / "data")
    train = runner.invoke(app, ["train", "--out", str(tmp_path / "run"), "--data", str(data), "--hidden-dim", "4",
                                "--epochs", "1", "--pool-size", "2", "--evidence-gain", "5"])
    assert train.exit_code == 0, train.output
    report_dir = tmp_path / "report"
    evaluation = runner.invoke(app, ["eval", "--out", str(report_dir), "--data", str(data),
                                     "--checkpoint", str(tmp_path / "run" / "checkpoint"), "--folds", "2"])
    assert evaluation.exit_code == 0, evaluation.output
    assert json.loads((report_dir / "run_config.json").read_text())["config"]["pool_size"] == 2
    assert json.loads((report_dir / "report.json").read_text())["n_samples"] == 6


def test_dirtest_on_files(tmp_path):
    a, b = simulate_pair("a_causes_b", 200, seed=3)
    save_tensor(tmp_path / "a.idt", a)
    save_tensor(tmp_path / "b.idt", b)
    out = tmp_path / "verdict"
    result = runner.invoke(app, ["dirtest", "--out", str(out), "--a", str(tmp_path / "a.idt"),
                                 "--b", str(tmp_path / "b.idt"), "--permutations", "50"])
    assert result.exit_code == 0, result.output
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["case"] in {"A_causes_B", "B_causes_A", "common_confounder", "common_effect"}


def test_dirtest_needs_inputs(tmp_path):
    result = runner.invoke(app, ["dirtest", "--out", str(tmp_path / "v")])
    assert result.exit_code == 2


def test_dirtest_degenerate_pair_exit_code(tmp_path):
    a = np.array([1.0, -1.0, 1.0, -1.0] * 10)
    b = np.array([1.0, 1.0, -1.0, -1.0] * 10)
    save_tensor(tmp_path / "a.idt", a)
    save_tensor(tmp_path / "b.idt", b)
    result = runner.invoke(app, ["dirtest", "--out", str(tmp_path / "v"), "--a", str(tmp_path / "a.idt"),
                                 "--b", str(tmp_path / "b.idt")])
    assert result.exit_code == 3


def test_deconfound_on_dataset(tmp_path):
    data = _gen(tmp_path / "data")
    out = tmp_path / "dc"
    result = runner.invoke(app, ["deconfound", "--out", str(out), "--data", str(data)])
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "summary.json").read_text())
    assert summary["samples"] == 12
    assert "mse_spectral" in summary and "mse_zero" in summary
    assert summary["omega_source"] == "oracle"
    assert (out / "c_est" / "s00000.idt").exists()


def test_deconfound_sweep_writes_csv(tmp_path):
    out = tmp_path / "sweep"
    result = runner.invoke(app, ["--threads", "1", "deconfound", "--out", str(out), "--sweep", "N",
                                 "--seeds", "1", "--skeletons", "1"])
    assert result.exit_code == 0, result.output
    lines = (out / "sweep.csv").read_text().strip().splitlines()
    assert lines[0].startswith("N,P,K,n,seed")
    assert len(lines) == 4


def test_unknown_sweep_axis(tmp_path):
    result = runner.invoke(app, ["deconfound", "--out", str(tmp_path / "s"), "--sweep", "Q"])
    assert result.exit_code == 2


def test_deconfound_rejects_zero_skeletons(tmp_path):
    result = runner.invoke(app, ["deconfound", "--out", str(tmp_path / "s"), "--sweep", "N", "--skeletons", "0"])
    assert result.exit_code == 2


def test_deconfound_config_section(tmp_path):
    cfg = tmp_path / "sweep.toml"
    cfg.write_text("[deconfound]\nsweep = \"N\"\nseeds = 1\nskeletons = 1\n", encoding="utf-8")
    out = tmp_path / "sweep"
    result = runner.invoke(app, ["--threads", "1", "deconfound", "--out", str(out), "--config", str(cfg)])
    assert result.exit_code == 0, result.output
    resolved = json.loads((out / "run_config.json").read_text())["config"]
    assert resolved["sweep"] == "N"
    assert resolved["seed_list"] == [0]
    assert len((out / "sweep.csv").read_text().strip().splitlines()) == 4


def test_deconfound_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "sweep.toml"
    cfg.write_text("[deconfound]\nsweeps = 3\n", encoding="utf-8")
    result = runner.invoke(app, ["deconfound", "--out", str(tmp_path / "s"), "--config", str(cfg)])
    assert result.exit_code == 2


@pytest.mark.slow
def test_deconfound_sweep_over_samples(tmp_path):
    out = tmp_path / "sweep"
    result = runner.invoke(app, ["deconfound", "--out", str(out), "--sweep", "n"])
    assert result.exit_code == 0, result.output
    summary = (out / "summary.csv").read_text().strip().splitlines()
    assert len(summary) == 4
