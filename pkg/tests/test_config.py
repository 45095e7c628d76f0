import pytest

from satad.config import (BENCH_TARGET, KNOWN_KEYS, RunConfig, dump_config, load_config,
                          parse_pairs)
from satad.errors import ConfigError


def test_bench_target_is_the_daily_volume_per_second_rounded_up():
    assert BENCH_TARGET == 54
    assert 53 < 4_628_800 / 86_400 < 54


def test_defaults_round_trip_through_the_file_format(tmp_path):
    cfg = load_config()
    path = tmp_path / "run.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
    assert set(parse_pairs(dump_config(cfg))) == set(KNOWN_KEYS)


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment line\nseed = 7\ntrain.epochs = 3   # trailing comment\n\ndetect.lambda = 0.25\n")
    cfg = load_config(path, {"detect.lambda": "0.75"})
    assert cfg.seed == 7 and cfg.train.epochs == 3 and cfg.detect.lam == 0.75


def test_seed_reaches_every_stochastic_stage():
    cfg = load_config(None, {"seed": "123"})
    assert cfg.train.seed == 123 and cfg.detect.inversion.seed == 123
    assert RunConfig().with_seed(5).detect.inversion.seed == 5


def test_inversion_solver_key():
    assert load_config(None).detect.inversion.solver == "lm"
    assert load_config(None, {"detect.solver": "gd"}).detect.inversion.solver == "gd"


def test_threshold_parsing():
    assert load_config(None, {"detect.threshold": "auto"}).detect.threshold == "auto"
    assert load_config(None, {"detect.threshold": "1.5"}).detect.threshold == 1.5


@pytest.mark.parametrize("text, where", [
    ("seed = 1\nbogus.key = 3\n", ":2:"),
    ("seed 1\n", ":1:"),
    ("= 4\n", ":1:"),
])
def test_file_errors_name_the_line(tmp_path, text, where):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=where):
        load_config(path)


@pytest.mark.parametrize("pairs", [
    {"seed": "x"},
    {"window.w": "8", "window.s": "9"},
    {"detect.lambda": "2"},
    {"detect.method": "svm"},
    {"detect.aggregate": "median"},
    {"train.lr_g": "0"},
    {"train.optimizer": "lbfgs"},
    {"detect.solver": "newton"},
    {"model.h": "0"},
    {"bench.duration": "0"},
    {"nope": "1"},
])
def test_invalid_values(pairs):
    with pytest.raises(ConfigError):
        load_config(None, pairs)


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/run.cfg")
