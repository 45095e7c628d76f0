"""
Sensor series ingestion, normalization, windowing, deduplication and
synthetic data generation.

Label convention: 0 marks an anomalous step, an integer c >= 1 marks normal
operation of device type c.
"""

from __future__ import annotations

import csv
import math
import os
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    ContractError,
    MissingFileError,
    NonNumericError,
    RaggedRowError,
    TruncatedFileError,
    UnknownLabelError,
    VersionError,
)

STD_FLOOR = 1e-8
DEFAULT_DEDUP_THRESHOLD = 1e-3

CACHE_MAGIC = b"SATD"
CACHE_VERSION = 1


@dataclass
class TimeSeries:
    """An M x K matrix of readings with optional per-step integer labels."""

    values: np.ndarray
    labels: np.ndarray | None = None
    channel_names: list[str] | None = None

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ContractError(f"values must be M x K with M, K >= 1, got {self.values.shape}")
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (self.values.shape[0],):
                raise ContractError("labels length must equal the number of steps")
            if labels.size and (not np.all(labels == np.round(labels)) or labels.min() < 0):
                raise ContractError("labels must be non-negative integers")
            self.labels = labels.astype(np.int64)
        if self.channel_names is None:
            self.channel_names = [f"x{k}" for k in range(self.values.shape[1])]
        elif len(self.channel_names) != self.values.shape[1]:
            raise ContractError("need one channel name per column")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "TimeSeries":
        labels = None if self.labels is None else self.labels[start:stop]
        return TimeSeries(self.values[start:stop], labels, list(self.channel_names))


def label_runs(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Split a label vector into maximal constant runs ``(label, start, stop)``."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(labels)) + 1
    bounds = np.concatenate([[0], cuts, [labels.size]])
    return [(int(labels[a]), int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_normalizer(train: TimeSeries) -> NormStats:
    """Per-channel mean and population std; constant channels get std 1e-8."""
    if train.n_steps < 2:
        raise ContractError("fitting a normalizer needs at least 2 steps")
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    std = np.where(std < STD_FLOOR, STD_FLOOR, std)
    return NormStats(mean, std)


def apply_normalizer(ts: TimeSeries, stats: NormStats) -> TimeSeries:
    if ts.n_channels != stats.mean.size:
        raise ContractError("channel count does not match the normalizer")
    return TimeSeries((ts.values - stats.mean) / stats.std, ts.labels, list(ts.channel_names))


def invert_normalizer(ts: TimeSeries, stats: NormStats) -> TimeSeries:
    return TimeSeries(ts.values * stats.std + stats.mean, ts.labels, list(ts.channel_names))


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowConfig:
    w: int = 32
    s: int = 4

    def validate(self, n_steps: int) -> None:
        if self.s < 1 or self.w < 1:
            raise ConfigError(f"window length and stride must be >= 1 (w={self.w}, s={self.s})")
        if self.s > self.w:
            raise ConfigError(f"stride {self.s} exceeds window length {self.w}")
        if self.w > n_steps:
            raise ConfigError(f"window length {self.w} exceeds series length {n_steps}")


def window_count(n_steps: int, w: int, s: int) -> int:
    return (n_steps - w) // s + 1


@dataclass
class WindowSet:
    windows: np.ndarray          # (m, w, K)
    start_indices: np.ndarray    # (m,)
    window_labels: np.ndarray | None
    w: int
    s: int

    def __len__(self):
        return self.windows.shape[0]

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.window_labels is None else self.window_labels[idx]
        return WindowSet(self.windows[idx], self.start_indices[idx], labels, self.w, self.s)

    @staticmethod
    def concat(parts: Sequence["WindowSet"]) -> "WindowSet":
        if not parts:
            raise ContractError("nothing to concatenate")
        labels = None
        if all(p.window_labels is not None for p in parts):
            labels = np.concatenate([p.window_labels for p in parts])
        return WindowSet(
            np.concatenate([p.windows for p in parts]),
            np.concatenate([p.start_indices for p in parts]),
            labels, parts[0].w, parts[0].s,
        )


def _window_label(step_labels: np.ndarray) -> int:
    if np.any(step_labels == 0):
        return 0
    counts = Counter(int(v) for v in step_labels)
    # majority, ties to the lowest device id
    return min(counts, key=lambda c: (-counts[c], c))


def make_windows(ts: TimeSeries, cfg: WindowConfig = WindowConfig(), offset: int = 0) -> WindowSet:
    """Cut windows of ``cfg.w`` steps starting at 0, s, 2s, ...

    ``offset`` is added to the recorded start indices, for windows cut from a
    slice of a longer series.
    """
    cfg.validate(ts.n_steps)
    m = window_count(ts.n_steps, cfg.w, cfg.s)
    starts = np.arange(m, dtype=np.int64) * cfg.s
    view = np.lib.stride_tricks.sliding_window_view(ts.values, cfg.w, axis=0)
    windows = np.ascontiguousarray(view[starts].transpose(0, 2, 1))
    labels = None
    if ts.labels is not None:
        labels = np.array([_window_label(ts.labels[a:a + cfg.w]) for a in starts], dtype=np.int64)
    return WindowSet(windows, starts + offset, labels, cfg.w, cfg.s)


def dedup_filter(ws: WindowSet, mse_threshold: float = DEFAULT_DEDUP_THRESHOLD) -> WindowSet:
    """Drop windows whose MSE to the last retained window is below the threshold."""
    if mse_threshold < 0:
        raise ConfigError("dedup threshold must be >= 0")
    if len(ws) == 0:
        return ws
    keep = [0]
    last = ws.windows[0]
    for i in range(1, len(ws)):
        if np.mean((ws.windows[i] - last) ** 2) < mse_threshold:
            continue
        keep.append(i)
        last = ws.windows[i]
    return ws.subset(keep)


# ---------------------------------------------------------------------------
# CSV and binary cache
# ---------------------------------------------------------------------------

@dataclass
class CsvSchema:
    """Expected column layout. ``None`` fields are inferred from the header."""

    n_features: int | None = None
    has_timestamp: bool | None = None
    has_label: bool | None = None
    allowed_labels: frozenset[int] | None = None


def load_csv(path, schema: CsvSchema | None = None) -> TimeSeries:
    schema = schema or CsvSchema()
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise RaggedRowError("empty file, header row required", row=1) from None
        has_ts = header[0].lower() == "timestamp" if schema.has_timestamp is None else schema.has_timestamp
        has_label = header[-1].lower() == "label" if schema.has_label is None else schema.has_label
        lo = 1 if has_ts else 0
        hi = len(header) - 1 if has_label else len(header)
        names = header[lo:hi]
        if not names:
            raise RaggedRowError("no feature columns in header", row=1)
        if schema.n_features is not None and len(names) != schema.n_features:
            raise RaggedRowError(
                f"expected {schema.n_features} feature columns, header has {len(names)}", row=1)

        values, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRowError(f"expected {len(header)} cells, found {len(row)}", row=lineno)
            vals = []
            for name, cell in zip(names, row[lo:hi]):
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericError(f"non-numeric value {cell!r}", row=lineno, column=name) from None
                if not math.isfinite(v):
                    raise NonNumericError(f"non-finite value {cell!r}", row=lineno, column=name)
                vals.append(v)
            values.append(vals)
            if has_label:
                cell = row[-1].strip()
                try:
                    lab = int(cell)
                except ValueError:
                    raise UnknownLabelError(f"label {cell!r} is not an integer", row=lineno,
                                            column=header[-1]) from None
                if lab < 0 or (schema.allowed_labels is not None and lab not in schema.allowed_labels):
                    raise UnknownLabelError(f"unknown label {lab}", row=lineno, column=header[-1])
                labels.append(lab)
    if not values:
        raise RaggedRowError("no data rows", row=2)
    return TimeSeries(np.array(values), np.array(labels) if has_label else None, names)


def write_csv(ts: TimeSeries, path, timestamps: bool = True) -> None:
    """Write a series with ``repr`` floats so that reading it back is exact."""
    header = (["timestamp"] if timestamps else []) + list(ts.channel_names)
    if ts.labels is not None:
        header.append("label")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ts.n_steps):
            row = [str(i)] if timestamps else []
            row.extend(repr(float(v)) for v in ts.values[i])
            if ts.labels is not None:
                row.append(str(int(ts.labels[i])))
            writer.writerow(row)


def write_cache(ts: TimeSeries, path) -> None:
    """Binary cache: magic, u16 version, u64 M and K, f64 values, then optional i64 labels."""
    M, K = ts.values.shape
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<HQQ", CACHE_VERSION, M, K))
        fh.write(np.ascontiguousarray(ts.values, dtype="<f8").tobytes())
        if ts.labels is not None:
            fh.write(ts.labels.astype("<i8").tobytes())


def read_cache(path) -> TimeSeries:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CACHE_MAGIC:
        raise BadMagicError(f"{path}: not a series cache file")
    if len(blob) < 22:
        raise TruncatedFileError(f"{path}: header truncated")
    version, M, K = struct.unpack_from("<HQQ", blob, 4)
    if version != CACHE_VERSION:
        raise VersionError(f"{path}: cache version {version}, expected {CACHE_VERSION}")
    body = memoryview(blob)[22:]
    nval = M * K * 8
    if len(body) < nval:
        raise TruncatedFileError(f"{path}: value block truncated")
    values = np.frombuffer(body[:nval], dtype="<f8").reshape(M, K).astype(np.float64)
    rest = len(body) - nval
    labels = None
    if rest == M * 8:
        labels = np.frombuffer(body[nval:], dtype="<i8").astype(np.int64)
    elif rest != 0:
        raise TruncatedFileError(f"{path}: label block has {rest} bytes, expected {M * 8}")
    return TimeSeries(values, labels)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sinusoid:
    period: float
    amplitude: float = 1.0
    phase: float = 0.0


ANOMALY_KINDS = ("spike", "level_shift", "drift")
TRANSFORMS = {
    "identity": lambda v: v,
    "tanh": np.tanh,
    "square": lambda v: v * v,
    "sin": np.sin,
    "abs": np.abs,
}


@dataclass(frozen=True)
class AnomalySpec:
    """Anomaly injection settings.

    ``rate`` is the per-step anomaly probability: the number of anomalous
    steps is Binomial(M, rate), laid out as events of ``min_length`` to
    ``max_length`` steps. ``magnitude`` is in units of the clean channel std.
    """

    rate: float = 0.0
    kinds: tuple[str, ...] = ANOMALY_KINDS
    magnitude: float = 3.0
    min_length: int = 8
    max_length: int = 40


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic multichannel series.

    Each source is a sum of sinusoids; channels are ``mixing @ sources``
    passed through a per-channel transform, plus Gaussian noise.
    """

    n_steps: int = 10_000
    sources: tuple[tuple[Sinusoid, ...], ...] = (
        (Sinusoid(50.0, 1.0, 0.0), Sinusoid(13.0, 0.4, 1.0)),
    )
    mixing: tuple[tuple[float, ...], ...] = ((1.0,),)
    transforms: tuple[str, ...] | None = None
    noise_sigma: float = 0.05
    device_id: int = 1
    anomaly: AnomalySpec = field(default_factory=AnomalySpec)

    @property
    def n_channels(self) -> int:
        return len(self.mixing)

    def validate(self) -> None:
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if not 0.0 <= self.anomaly.rate <= 1.0:
            raise ConfigError(f"anomaly rate {self.anomaly.rate} outside [0, 1]")
        if any(len(row) != len(self.sources) for row in self.mixing):
            raise ConfigError("mixing matrix needs one column per source")
        if self.transforms is not None:
            if len(self.transforms) != self.n_channels:
                raise ConfigError("need one transform per channel")
            bad = set(self.transforms) - set(TRANSFORMS)
            if bad:
                raise ConfigError(f"unknown transforms {sorted(bad)}")
        bad = set(self.anomaly.kinds) - set(ANOMALY_KINDS)
        if bad or not self.anomaly.kinds:
            raise ConfigError(f"anomaly kinds must be a non-empty subset of {ANOMALY_KINDS}")
        if self.device_id < 1:
            raise ConfigError("device ids start at 1")
        if not 1 <= self.anomaly.min_length <= self.anomaly.max_length:
            raise ConfigError("need 1 <= min_length <= max_length")


def synth_clean(spec: SynthSpec, rng: np.random.Generator, start: int = 0) -> np.ndarray:
    """Noisy normal signal for steps ``start .. start + n_steps - 1``."""
    spec.validate()
    t = np.arange(start, start + spec.n_steps, dtype=np.float64)
    src = np.stack([
        sum(c.amplitude * np.sin(2 * np.pi * t / c.period + c.phase) for c in comps)
        for comps in spec.sources
    ], axis=1)
    mixed = src @ np.asarray(spec.mixing, dtype=np.float64).T
    if spec.transforms is not None:
        mixed = np.stack([TRANSFORMS[f](mixed[:, k]) for k, f in enumerate(spec.transforms)], axis=1)
    return mixed + spec.noise_sigma * rng.standard_normal(mixed.shape)


def inject_anomalies(values: np.ndarray, anomaly: AnomalySpec, rng: np.random.Generator,
                     scale: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Add anomaly events to a copy of ``values``.

    Returns the corrupted values and a boolean mask of anomalous steps.
    """
    M, K = values.shape
    out = values.copy()
    mask = np.zeros(M, dtype=bool)
    if not 0.0 <= anomaly.rate <= 1.0:
        raise ConfigError(f"anomaly rate {anomaly.rate} outside [0, 1]")
    total = int(rng.binomial(M, anomaly.rate))
    if total == 0:
        return out, mask
    lengths = []
    left = total
    while left > 0:
        n = int(rng.integers(anomaly.min_length, anomaly.max_length + 1))
        lengths.append(min(n, left))
        left -= lengths[-1]
    # spread the free steps over len(lengths) + 1 gaps
    free = M - total
    cuts = np.sort(rng.integers(0, free + 1, size=len(lengths)))
    if scale is None:
        scale = values.std(axis=0)
    pos = 0
    prev_cut = 0
    for n, cut in zip(lengths, cuts):
        pos += int(cut - prev_cut)
        prev_cut = cut
        kind = anomaly.kinds[int(rng.integers(len(anomaly.kinds)))]
        ch = int(rng.integers(K))
        amp = anomaly.magnitude * scale[ch] * (1.0 if rng.random() < 0.5 else -1.0)
        seg = slice(pos, pos + n)
        if kind == "spike":
            signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            out[seg, ch] += abs(amp) * signs
        elif kind == "level_shift":
            out[seg, ch] += amp
        else:
            out[seg, ch] += amp * np.arange(1, n + 1) / n
        mask[seg] = True
        pos += n
    return out, mask


def synth_generate(spec: SynthSpec, seed: int) -> TimeSeries:
    """Deterministic synthetic series with anomalies per ``spec.anomaly``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    clean = synth_clean(spec, rng)
    values, mask = inject_anomalies(clean, spec.anomaly, rng)
    labels = np.where(mask, 0, spec.device_id)
    return TimeSeries(values, labels, [f"ch{k}" for k in range(spec.n_channels)])


def synth_train_test(specs: Sequence[SynthSpec], n_train: int, n_test: int,
                     seed: int) -> tuple[TimeSeries, TimeSeries]:
    """Normal-only training series and an anomalous test series per device spec.

    The test part of each device continues the same signal after its
    training part. Devices are laid out as consecutive blocks.
    """
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for spec in specs:
        spec.validate()
        clean = synth_clean(replace(spec, n_steps=n_train + n_test), rng)
        train = clean[:n_train]
        test, mask = inject_anomalies(clean[n_train:], spec.anomaly, rng, scale=train.std(axis=0))
        train_parts.append((train, np.full(n_train, spec.device_id)))
        test_parts.append((test, np.where(mask, 0, spec.device_id)))
    names = [f"ch{k}" for k in range(specs[0].n_channels)]

    def build(parts):
        return TimeSeries(np.concatenate([p[0] for p in parts]),
                          np.concatenate([p[1] for p in parts]), names)

    return build(train_parts), build(test_parts)


def default_device_spec(device_id: int = 1, n_steps: int = 10_000, noise_sigma: float = 0.05,
                        rate: float = 0.05, magnitude: float = 0.75) -> SynthSpec:
    """Three-channel sensor recipe used by the command-line tool and the demos.

    Two latent drivers, each a sum of two sinusoids, feed three sensors: one
    reads the first driver directly, one saturates (tanh) and one wraps (sin).
    Device types differ in their driver periods and in the sign of the third
    sensor's coupling.

    Anomaly events last 32 to 128 steps at 0.75 channel std: long enough
    that a perfect model of the clean signal, scored on 32-step windows,
    separates them almost completely, and small enough that thresholding
    the window energy alone does not.
    """
    if device_id < 1:
        raise ConfigError("device ids start at 1")
    stretch = 1.0 + 0.37 * (device_id - 1)
    sign = 1.0 if device_id % 2 else -1.0
    S = Sinusoid
    return SynthSpec(
        n_steps=n_steps,
        sources=((S(50.0 * stretch, 1.0, 0.0), S(21.0 * stretch, 0.5, 0.7)),
                 (S(137.0 * stretch, 1.0, 1.3), S(33.0 * stretch, 0.4, 2.1))),
        mixing=((1.0, 0.0), (0.9, 0.7), (1.2, -0.9 * sign)),
        transforms=("identity", "tanh", "sin"),
        noise_sigma=noise_sigma,
        device_id=device_id,
        anomaly=AnomalySpec(rate=rate, magnitude=magnitude, min_length=32, max_length=128),
    )


def device_windows(ts: TimeSeries, cfg: WindowConfig, device_id: int) -> WindowSet:
    """Windows lying entirely inside the runs of steps labelled ``device_id``."""
    if ts.labels is None:
        if device_id != 1:
            raise ContractError("an unlabelled series only holds device 1")
        return make_windows(ts, cfg)
    parts = [make_windows(ts.slice(a, b), cfg, offset=a)
             for lab, a, b in label_runs(ts.labels) if lab == device_id and b - a >= cfg.w]
    if not parts:
        raise ContractError(f"no run of device {device_id} is at least {cfg.w} steps long")
    return WindowSet.concat(parts)
