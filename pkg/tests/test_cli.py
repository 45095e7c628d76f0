import json
import os
import subprocess
import sys

import numpy as np
import pytest

from satad.cli import main
from satad.data import load_csv

SMALL = """\
synth.n_train = 600
synth.n_test = 300
window.w = 16
window.s = 4
model.L = 2
model.h = 6
train.epochs = 2
detect.steps = 5
detect.restarts = 1
"""


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.cfg"
    path.write_text(SMALL)
    return str(path)


def _run(*args, cwd=None):
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    return subprocess.run([sys.executable, "-m", "satad.cli", *args], capture_output=True, text=True,
                          cwd=cwd, env=env, timeout=600)


def _pipeline(root, cfg, seed="5", extra=()):
    data, ck, rep = root / "data", root / "ck", root / "rep"
    assert main(["synth", "--config", cfg, "--seed", seed, "--out", str(data)]) == 0
    assert main(["train", "--config", cfg, "--seed", seed, "--data", str(data / "train.csv"),
                 "--out", str(ck)]) == 0
    assert main(["detect", "--config", cfg, "--seed", seed, "--models", str(ck),
                 "--test", str(data / "test.csv"), "--out", str(rep), *extra]) == 0
    return data, ck, rep


def test_pipeline_is_byte_identical_per_seed(tmp_path, small_cfg):
    a = _pipeline(tmp_path / "a", small_cfg)
    _pipeline(tmp_path / "b", small_cfg)
    for name in ("data/train.csv", "data/test.csv", "ck/model_c1.satg", "rep/scores.csv", "rep/report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    c = _pipeline(tmp_path / "c", small_cfg, seed="6")
    assert (c[2] / "scores.csv").read_bytes() != (a[2] / "scores.csv").read_bytes()
    test = load_csv(a[0] / "test.csv")
    assert test.labels is not None and np.any(test.labels == 0)
    report = json.loads((a[2] / "report.json").read_text())
    assert {"tp", "fp", "fn", "tn", "precision", "recall", "f1", "curve"} <= set(report)


def test_lambda_flag_overrides_the_config(tmp_path, small_cfg):
    data, ck, _ = _pipeline(tmp_path, small_cfg)
    outs = {}
    for lam in ("0", "1"):
        out = tmp_path / f"lam{lam}"
        assert main(["detect", "--config", small_cfg, "--seed", "5", "--models", str(ck), "--lambda", lam,
                     "--threshold", "0.5", "--test", str(data / "test.csv"), "--out", str(out)]) == 0
        outs[lam] = (out / "scores.csv").read_text()
    assert outs["0"] != outs["1"]


def test_baselines_and_eval(tmp_path, small_cfg, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--config", small_cfg, "--out", str(data)]) == 0
    for method in ("pca", "knn"):
        out = tmp_path / method
        assert main(["detect", "--config", small_cfg, "--method", method, "--data", str(data / "train.csv"),
                     "--test", str(data / "test.csv"), "--out", str(out)]) == 0
        assert main(["eval", str(out / "scores.csv"), "--out", str(out)]) == 0
        assert json.loads((out / "eval.json").read_text())["tp"] >= 0
    assert "best F1 over sweep" in capsys.readouterr().out


def test_synth_with_zero_rate_has_no_anomalies(tmp_path, small_cfg):
    assert main(["synth", "--config", small_cfg, "--set", "synth.rate=0", "--out", str(tmp_path)]) == 0
    assert not np.any(load_csv(tmp_path / "test.csv").labels == 0)


def test_one_checkpoint_per_device(tmp_path, small_cfg):
    data, ck = tmp_path / "data", tmp_path / "ck"
    assert main(["synth", "--config", small_cfg, "--set", "synth.devices=2", "--out", str(data)]) == 0
    assert main(["train", "--config", small_cfg, "--set", "train.epochs=1",
                 "--data", str(data / "train.csv"), "--out", str(ck)]) == 0
    assert sorted(p.name for p in ck.glob("*.satg")) == ["model_c1.satg", "model_c2.satg"]


def test_training_on_anomalous_data_is_refused(tmp_path, small_cfg):
    data = tmp_path / "data"
    assert main(["synth", "--config", small_cfg, "--out", str(data)]) == 0
    r = _run("train", "--config", small_cfg, "--data", str(data / "test.csv"), "--out", str(tmp_path / "ck"))
    assert r.returncode == 1
    assert r.stderr.startswith("error: ContractError:") and r.stderr.count("\n") == 1


@pytest.mark.parametrize("args, kind", [
    (["detect", "--models", "/nonexistent/ck", "--test", "{data}/test.csv"], "ConfigError"),
    (["detect", "--models", "{tmp}", "--test", "{data}/test.csv"], "ConfigError"),
    (["train", "--data", "/nonexistent/train.csv"], "MissingFileError"),
    (["synth", "--set", "window.w"], "ConfigError"),
    (["synth", "--set", "detect.lambda=7"], "ConfigError"),
    (["eval", "/nonexistent/scores.csv"], "FileNotFoundError"),
])
def test_errors_are_one_line_and_nonzero(tmp_path, small_cfg, args, kind):
    data = tmp_path / "data"
    assert main(["synth", "--config", small_cfg, "--out", str(data)]) == 0
    args = [a.format(data=data, tmp=tmp_path) for a in args]
    r = _run(*args, "--config", small_cfg, "--out", str(tmp_path / "out"))
    assert r.returncode == 1
    assert r.stderr.startswith(f"error: {kind}:")
    assert r.stderr.count("\n") == 1


def test_bench_reports_both_modes(tmp_path, small_cfg):
    data, ck, _ = _pipeline(tmp_path, small_cfg)
    out = tmp_path / "bench"
    r = _run("bench", "--config", small_cfg, "--models", str(ck), "--duration", "1.5", "--out", str(out))
    assert r.returncode == 0, r.stderr
    assert "target = 54 steps/s" in r.stdout
    report = json.loads((out / "bench.json").read_text())
    assert report["target_steps_per_second"] == 54
    score, full = report["modes"]["score"], report["modes"]["full"]
    for mode in (score, full):
        assert {"latency_p50_ms", "latency_p99_ms", "steps_per_second"} <= set(mode)
    assert score["steps_per_second"] > full["steps_per_second"]
    # short runs never pass: the gate requires at least 60 s
    assert report["pass"] is False


def test_help_runs():
    r = _run("--help")
    assert r.returncode == 0 and "bench" in r.stdout
