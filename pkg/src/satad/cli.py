"""
Command-line entry point: ``satad {synth,train,detect,eval,bench}``.

Every command accepts ``--config``, ``--seed`` and ``--out``; ``detect`` and
``bench`` also take ``--lambda`` and ``--threshold``. Errors print one line
``error: <Kind>: <reason>`` on stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import model as gm
from .baselines import baseline_series
from .config import RunConfig, load_config
from .data import (
    NormStats,
    TimeSeries,
    apply_normalizer,
    dedup_filter,
    default_device_spec,
    device_windows,
    fit_normalizer,
    load_csv,
    synth_clean,
    synth_train_test,
    write_csv,
)
from .detect import (
    ScoreConfig,
    ScoreSeries,
    classify,
    detect,
    read_score_csv,
    resolve_threshold,
    score_windows,
)
from .errors import ConfigError, ContractError, SatadError
from .evaluate import best_f1_report, evaluate
from .train import train

log = logging.getLogger("satad")

NORM_FILE = "norm.json"
# a throughput claim needs a sustained run; shorter benches report but never pass
MIN_BENCH_SECONDS = 60.0


def checkpoint_name(device_id: int) -> str:
    return f"model_c{device_id}.satg"


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _device_specs(cfg: RunConfig):
    sc = cfg.synth
    return [default_device_spec(c, noise_sigma=sc.noise_sigma, rate=sc.rate, magnitude=sc.magnitude)
            for c in range(1, sc.devices + 1)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    out = _out_dir(args, cfg.paths.data)
    train_ts, test_ts = synth_train_test(_device_specs(cfg), cfg.synth.n_train, cfg.synth.n_test, cfg.seed)
    write_csv(train_ts, out / "train.csv")
    write_csv(test_ts, out / "test.csv")
    n_anom = int(np.sum(test_ts.labels == 0))
    print(f"wrote {out / 'train.csv'} ({train_ts.n_steps} steps) and {out / 'test.csv'} "
          f"({test_ts.n_steps} steps, {n_anom} anomalous)")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(args, cfg.paths.checkpoints)
    ts = load_csv(args.data or Path(cfg.paths.data) / "train.csv")
    if ts.labels is not None and np.any(ts.labels == 0):
        raise ContractError(f"training data has {int(np.sum(ts.labels == 0))} steps labelled 0; "
                            "train on normal data only")
    stats = fit_normalizer(ts)
    (out / NORM_FILE).write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
    norm = apply_normalizer(ts, stats)
    devices = [1] if ts.labels is None else sorted(int(c) for c in np.unique(ts.labels))
    for c in devices:
        ws = dedup_filter(device_windows(norm, cfg.window, c), cfg.dedup)
        t0 = time.perf_counter()
        model0 = gm.init(cfg.seed + c - 1, cfg.window.w, ts.n_channels, cfg.model.L, cfg.model.h)
        model, history = train(model0, ws, cfg.train)
        gm.save(model, out / checkpoint_name(c))
        history.to_csv(out / f"train_log_c{c}.csv")
        print(f"device {c}: {len(ws)} windows, {len(history)} steps, "
              f"{time.perf_counter() - t0:.1f}s -> {out / checkpoint_name(c)}")
    return 0


def _load_models(model_dir: Path) -> tuple[dict[int, gm.GanModel], NormStats]:
    if not model_dir.is_dir():
        raise ConfigError(f"checkpoint directory not found: {model_dir}")
    paths = sorted(model_dir.glob("model_c*.satg"))
    if not paths:
        raise ConfigError(f"no checkpoint (model_c*.satg) in {model_dir}")
    models = {int(p.stem[len("model_c"):]): gm.load(p) for p in paths}
    norm_path = model_dir / NORM_FILE
    if not norm_path.is_file():
        raise ConfigError(f"normalizer stats not found: {norm_path}")
    stats = NormStats.from_dict(json.loads(norm_path.read_text()))
    return models, stats


def cmd_detect(cfg: RunConfig, args) -> int:
    out = _out_dir(args, cfg.paths.reports)
    test = load_csv(args.test or Path(cfg.paths.data) / "test.csv")
    score_cfg = cfg.detect
    if cfg.method == "gan":
        models, stats = _load_models(Path(args.models or cfg.paths.checkpoints))
        widths = {m.K for m in models.values()}
        if widths != {test.n_channels}:
            raise ContractError(f"test data has {test.n_channels} channels, models expect {sorted(widths)}")
        series = detect(models, apply_normalizer(test, stats), cfg.window, score_cfg)
    else:
        train_ts = load_csv(args.data or Path(cfg.paths.data) / "train.csv")
        stats = fit_normalizer(train_ts)
        series = baseline_series(cfg.method, apply_normalizer(train_ts, stats),
                                 apply_normalizer(test, stats), cfg.window)
        series.threshold = resolve_threshold(score_cfg, series.step_scores, test.labels)
        device = 1 if train_ts.labels is None else int(np.max(train_ts.labels))
        series.predicted = classify({device: series.step_scores}, series.threshold)
    series.to_csv(out / "scores.csv")
    report = _report(series)
    report.to_json(out / "report.json")
    print(report.format_table())
    return 0


def _report(series: ScoreSeries):
    if series.true_labels is None:
        raise ContractError("test data has no labels; cannot evaluate")
    report = evaluate(series.predicted, series.true_labels)
    report.threshold = series.threshold
    sweep = best_f1_report(series.step_scores, series.true_labels)
    report.curve = sweep.curve
    return report


def cmd_eval(cfg: RunConfig, args) -> int:
    scores, pred, true = read_score_csv(args.scores)
    if true is None:
        raise ContractError(f"{args.scores} has no true_label column")
    best = best_f1_report(scores, true, cfg.detect.sweep_points)
    if pred is not None:
        report = evaluate(pred, true)
        report.curve = best.curve
        print(report.format_table())
    else:
        report = best
    print(f"best F1 over sweep = {best.f1:.4f} at threshold {best.threshold:.6g}")
    if args.out:
        out = _out_dir(args, cfg.paths.reports)
        report.to_json(out / "eval.json")
    return 0


def _bench_mode(models, stream: np.ndarray, cfg: RunConfig, score_cfg: ScoreConfig,
                duration: float) -> dict:
    """Score windows one at a time, as they would arrive, for ``duration`` seconds."""
    w, s = cfg.window.w, cfg.window.s
    starts = np.arange(0, stream.shape[0] - w + 1, s)
    latencies = []
    t_begin = time.perf_counter()
    i = 0
    while True:
        start = starts[i % starts.size]
        y = stream[start:start + w][None]
        t0 = time.perf_counter()
        # the step score is the minimum over device models, as in detect()
        min(score_windows(m, y, score_cfg, keys=[i], threads=1)[0][0] for m in models.values())
        t1 = time.perf_counter()
        latencies.append(t1 - t0)
        i += 1
        if t1 - t_begin >= duration:
            break
    elapsed = time.perf_counter() - t_begin
    lat = np.asarray(latencies)
    return {
        "windows": i,
        "scored_steps": i * s,
        "seconds": elapsed,
        "steps_per_second": i * s / elapsed,
        "latency_p50_ms": 1e3 * float(np.percentile(lat, 50)),
        "latency_p99_ms": 1e3 * float(np.percentile(lat, 99)),
    }


def cmd_bench(cfg: RunConfig, args) -> int:
    out = _out_dir(args, cfg.paths.reports)
    models, stats = _load_models(Path(args.models or cfg.paths.checkpoints))
    K = next(iter(models.values())).K
    spec = default_device_spec(1, n_steps=4096, noise_sigma=cfg.synth.noise_sigma)
    if spec.n_channels != K:
        raise ContractError(f"bench stream has {spec.n_channels} channels, models expect {K}")
    rng = np.random.default_rng(cfg.seed)
    stream = apply_normalizer(TimeSeries(synth_clean(spec, rng)), stats).values
    duration = cfg.bench.duration
    modes = ["score", "full"] if args.mode == "both" else [args.mode]
    results = {}
    for mode in modes:
        score_cfg = cfg.detect
        if mode == "score":
            score_cfg = replace(score_cfg, inversion=replace(score_cfg.inversion, steps=0))
        results[mode] = _bench_mode(models, stream, cfg, score_cfg, duration)
        r = results[mode]
        print(f"{mode:>5}: {r['steps_per_second']:.1f} steps/s over {r['seconds']:.1f}s "
              f"({r['windows']} windows), latency p50 {r['latency_p50_ms']:.2f} ms, "
              f"p99 {r['latency_p99_ms']:.2f} ms")
    target = cfg.bench.target
    gated = results.get("score", results.get("full"))
    passed = gated["steps_per_second"] >= target and gated["seconds"] >= MIN_BENCH_SECONDS
    summary = {"target_steps_per_second": target, "modes": results,
               "gated_mode": "score" if "score" in results else "full", "pass": bool(passed)}
    (out / "bench.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"target = {target:g} steps/s: {'PASS' if passed else 'FAIL'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="seed for every stochastic step")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    scoring = argparse.ArgumentParser(add_help=False)
    scoring.add_argument("--lambda", dest="lam", type=float, help="blend weight of the reconstruction term")
    scoring.add_argument("--threshold", help="score threshold, a number or 'auto'")
    scoring.add_argument("--models", help="checkpoint directory")

    parser = argparse.ArgumentParser(prog="satad",
                                     description="Self-attention GAN anomaly detection for sensor streams.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write synthetic train/test CSVs")
    p = sub.add_parser("train", parents=[common], help="train one GAN per device type")
    p.add_argument("--data", help="training CSV")
    p = sub.add_parser("detect", parents=[common, scoring], help="score and label a test CSV")
    p.add_argument("--test", help="test CSV")
    p.add_argument("--data", help="training CSV (baselines only)")
    p.add_argument("--method", choices=("gan", "pca", "knn"))
    p = sub.add_parser("eval", parents=[common], help="metrics from a score CSV")
    p.add_argument("scores", help="score CSV written by detect")
    p = sub.add_parser("bench", parents=[common, scoring], help="throughput against the real-time budget")
    p.add_argument("--mode", choices=("score", "full", "both"), default="both")
    p.add_argument("--duration", type=float, help="seconds per mode")
    return parser


def _overrides(args) -> dict[str, str]:
    pairs = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        pairs[key.strip()] = value.strip()
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    if getattr(args, "lam", None) is not None:
        pairs["detect.lambda"] = repr(args.lam)
    if getattr(args, "threshold", None) is not None:
        pairs["detect.threshold"] = args.threshold
    if getattr(args, "method", None) is not None:
        pairs["detect.method"] = args.method
    if getattr(args, "duration", None) is not None:
        pairs["bench.duration"] = repr(args.duration)
    return pairs


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except (SatadError, OSError, ValueError) as exc:
        reason = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {reason}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
