"""
Run configuration for the command-line tool.

Config files are flat ``key = value`` lines; ``#`` starts a comment. Keys are
dotted ``section.field`` names (``train.epochs``, ``detect.lambda``) plus the
top-level ``seed``. Unknown keys and malformed values are errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

from .data import DEFAULT_DEDUP_THRESHOLD, WindowConfig
from .detect import ScoreConfig
from .errors import ConfigError
from .train import TrainConfig


@dataclass(frozen=True)
class ModelConfig:
    L: int = 2
    h: int = 16


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 20_000
    n_test: int = 5_000
    rate: float = 0.05
    magnitude: float = 0.75
    noise_sigma: float = 0.05
    devices: int = 1


@dataclass(frozen=True)
class PathsConfig:
    data: str = "data"
    checkpoints: str = "checkpoints"
    reports: str = "reports"


# 4,628,800 readings per day is 53.57 per second; the budget rounds up
BENCH_TARGET = math.ceil(4_628_800 / 86_400)


@dataclass(frozen=True)
class BenchConfig:
    duration: float = 60.0
    target: float = BENCH_TARGET


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    window: WindowConfig = WindowConfig()
    dedup: float = DEFAULT_DEDUP_THRESHOLD
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    detect: ScoreConfig = ScoreConfig()
    method: str = "gan"
    synth: SynthConfig = SynthConfig()
    paths: PathsConfig = PathsConfig()
    bench: BenchConfig = BenchConfig()

    def with_seed(self, seed: int) -> "RunConfig":
        """Propagate one seed to every stochastic stage."""
        return replace(
            self, seed=seed,
            train=replace(self.train, seed=seed),
            detect=replace(self.detect, inversion=replace(self.detect.inversion, seed=seed)),
        )


def _threshold(text: str):
    return "auto" if text.strip().lower() == "auto" else float(text)


# key -> (path of attribute names inside RunConfig, parser)
_KEYS = {
    "seed": (("seed",), int),
    "window.w": (("window", "w"), int),
    "window.s": (("window", "s"), int),
    "window.dedup": (("dedup",), float),
    "model.L": (("model", "L"), int),
    "model.h": (("model", "h"), int),
    "train.epochs": (("train", "epochs"), int),
    "train.batch_size": (("train", "batch_size"), int),
    "train.lr_g": (("train", "lr_g"), float),
    "train.lr_d": (("train", "lr_d"), float),
    "train.decay_factor": (("train", "decay_factor"), float),
    "train.decay_every": (("train", "decay_every"), int),
    "train.sample_average_every": (("train", "sample_average_every"), int),
    "train.optimizer": (("train", "optimizer"), str),
    "train.momentum": (("train", "momentum"), float),
    "train.beta1": (("train", "beta1"), float),
    "train.beta2": (("train", "beta2"), float),
    "detect.method": (("method",), str),
    "detect.lambda": (("detect", "lam"), float),
    "detect.threshold": (("detect", "threshold"), _threshold),
    "detect.aggregate": (("detect", "aggregate"), str),
    "detect.sweep_points": (("detect", "sweep_points"), int),
    "detect.steps": (("detect", "inversion", "steps"), int),
    "detect.lr": (("detect", "inversion", "lr"), float),
    "detect.restarts": (("detect", "inversion", "restarts"), int),
    "detect.solver": (("detect", "inversion", "solver"), str),
    "synth.n_train": (("synth", "n_train"), int),
    "synth.n_test": (("synth", "n_test"), int),
    "synth.rate": (("synth", "rate"), float),
    "synth.magnitude": (("synth", "magnitude"), float),
    "synth.noise_sigma": (("synth", "noise_sigma"), float),
    "synth.devices": (("synth", "devices"), int),
    "paths.data": (("paths", "data"), str),
    "paths.checkpoints": (("paths", "checkpoints"), str),
    "paths.reports": (("paths", "reports"), str),
    "bench.duration": (("bench", "duration"), float),
    "bench.target": (("bench", "target"), float),
}

KNOWN_KEYS = tuple(_KEYS)


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    """Split config text into raw ``key -> value`` strings (later lines win)."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        pairs[key] = value
    return pairs


def _set(obj, path: tuple[str, ...], value):
    if len(path) == 1:
        return replace(obj, **{path[0]: value})
    return replace(obj, **{path[0]: _set(getattr(obj, path[0]), path[1:], value)})


def apply_pairs(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    for key, text in pairs.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        path, parse = _KEYS[key]
        try:
            value = parse(text)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {text!r}") from None
        cfg = _set(cfg, path, value)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Range checks that do not depend on the data."""
    if cfg.window.w < 1 or cfg.window.s < 1 or cfg.window.s > cfg.window.w:
        raise ConfigError(f"window needs 1 <= s <= w, got w={cfg.window.w} s={cfg.window.s}")
    if cfg.dedup < 0:
        raise ConfigError("window.dedup must be >= 0")
    if cfg.model.L < 1 or cfg.model.h < 1:
        raise ConfigError("model.L and model.h must be positive")
    if cfg.method not in ("gan", "pca", "knn"):
        raise ConfigError(f"detect.method must be gan, pca or knn, got {cfg.method!r}")
    if cfg.synth.devices < 1 or cfg.synth.n_train < cfg.window.w or cfg.synth.n_test < cfg.window.w:
        raise ConfigError("synth needs devices >= 1 and series at least one window long")
    if cfg.bench.duration <= 0:
        raise ConfigError("bench.duration must be positive")
    cfg.train.validate()
    cfg.detect.validate()


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    cfg = RunConfig()
    pairs: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        pairs.update(parse_pairs(p.read_text(encoding="utf-8"), str(p)))
    pairs.update(overrides or {})
    cfg = apply_pairs(cfg, pairs)
    cfg = cfg.with_seed(cfg.seed)
    validate(cfg)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Render every key with its current value, in the file format."""
    lines = []
    for key, (path, _) in _KEYS.items():
        value = cfg
        for name in path:
            value = getattr(value, name)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
