"""
Anomaly scoring with a trained GAN.

Each test window y is inverted to the latent z' whose generation G(z') is
closest to it, then scored as

    Res(y) = lam * ||y - G(z')|| + (1 - lam) * |D(y) - D(G(z'))|

Window scores are spread back onto steps, thresholded, and, with one model per
device type, turned into device labels (0 = anomaly).
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as T
from .data import TimeSeries, WindowConfig, make_windows
from .errors import ConfigError, ContractError, DivergenceError
from .evaluate import threshold_sweep
from .model import GanModel, discriminate, generate, generate_with_jacobian
from .tensor import GradTape, Tensor

CHUNK = 256
MAX_HALVINGS = 8
SOLVERS = ("lm", "gd")
# damping is divided by LM_RELAX after an accepted step and multiplied by
# LM_TIGHTEN after a rejected one
LM_RELAX, LM_TIGHTEN = 3.0, 4.0
LM_MIN_DAMPING = 1e-9
# a row stops once an accepted step improves its objective by less than
# LM_FTOL of its value, or once ||y - G(z)|| <= LM_RTOL ||y||
LM_FTOL, LM_RTOL = 1e-8, 1e-8
# rows per Jacobian pass, bounding the (rows, w*L, w, w) tangent arrays
JAC_BLOCK = 32


@dataclass(frozen=True)
class InversionConfig:
    """Latent search settings.

    ``solver`` is ``"lm"`` (damped Gauss-Newton) or ``"gd"`` (plain gradient
    descent). Both take at most ``steps`` iterations from ``restarts`` seeded
    starts, and both only accept steps that do not raise the objective.
    ``lr`` is the gradient-descent rate; for ``lm`` it sets the initial
    damping to ``1 / (2 lr)``, which makes a heavily damped first step equal
    to a gradient step of rate ``lr``.
    """

    steps: int = 10
    lr: float = 0.1
    restarts: int = 3
    seed: int = 0
    solver: str = "lm"

    def validate(self) -> None:
        # steps == 0 keeps the best initial draw (score-only mode)
        if self.steps < 0 or self.restarts < 1 or self.lr < 0:
            raise ConfigError("inversion needs steps >= 0, restarts >= 1 and lr >= 0")
        if self.solver not in SOLVERS:
            raise ConfigError(f"inversion solver must be one of {SOLVERS}, got {self.solver!r}")


@dataclass(frozen=True)
class ScoreConfig:
    lam: float = 0.5
    inversion: InversionConfig = field(default_factory=InversionConfig)
    threshold: float | str = "auto"
    aggregate: str = "mean"
    sweep_points: int = 200

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda {self.lam} outside [0, 1]")
        if self.aggregate not in ("mean", "max"):
            raise ConfigError(f"unknown aggregation {self.aggregate!r}")
        if isinstance(self.threshold, str) and self.threshold != "auto":
            raise ConfigError(f"threshold must be a number or 'auto', got {self.threshold!r}")
        self.inversion.validate()


# ---------------------------------------------------------------------------
# latent inversion
# ---------------------------------------------------------------------------

def _sq_error(model: GanModel, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    r = y - generate(model, Tensor._wrap(z)).data
    return np.einsum("bij,bij->b", r, r)


def _initial_latents(model: GanModel, keys: np.ndarray, cfg: InversionConfig) -> np.ndarray:
    # one generator per window key so that a window's start does not depend on batching
    out = np.empty((cfg.restarts, keys.size, model.w, model.L))
    for j, key in enumerate(keys):
        rng = np.random.default_rng([cfg.seed, int(key)])
        out[:, j] = rng.standard_normal((cfg.restarts, model.w, model.L))
    return out


def _jacobian_blocks(model: GanModel, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ys, Js = zip(*(generate_with_jacobian(model, z[b:b + JAC_BLOCK]) for b in range(0, len(z), JAC_BLOCK)))
    return np.concatenate(ys), np.concatenate(Js)


def _check_finite(f: np.ndarray, rows: np.ndarray, it: int, keys: np.ndarray, n: int) -> None:
    if not np.all(np.isfinite(f)):
        bad = int(rows[np.flatnonzero(~np.isfinite(f))[0]])
        raise DivergenceError(f"non-finite inversion objective at iteration {it}, window key {int(keys[bad % n])}")


def _descend_gd(model, z, y, f, cfg, keys, n, trace):
    yt = Tensor._wrap(y)
    for it in range(cfg.steps):
        zt = Tensor._wrap(z)
        with GradTape() as tape:
            loss = T.sum_all(T.square(T.sub(yt, generate(model, zt))))
        grad = T.backward(tape, loss, wrt=[zt])[zt].data
        # each iteration starts from the full rate and halves it per row until
        # the objective does not increase; rows that never succeed stay put
        step = np.full(len(z), cfg.lr)
        pending = np.ones(len(z), dtype=bool)
        for _ in range(MAX_HALVINGS + 1):
            rows = np.flatnonzero(pending)
            cand = z[rows] - step[rows, None, None] * grad[rows]
            f_cand = _sq_error(model, cand, y[rows])
            _check_finite(f_cand, rows, it, keys, n)
            ok = f_cand <= f[rows]
            z[rows[ok]] = cand[ok]
            f[rows[ok]] = f_cand[ok]
            pending[rows[ok]] = False
            step[rows[~ok]] *= 0.5
            if not pending.any():
                break
        if trace is not None:
            trace.append(f.copy())


def _descend_lm(model, z, y, f, cfg, keys, n, trace):
    if cfg.lr == 0:
        # infinite damping: no step is ever taken
        for _ in range(cfg.steps):
            if trace is not None:
                trace.append(f.copy())
        return
    damping = np.full(len(z), 1.0 / (2.0 * cfg.lr))
    floor = LM_RTOL ** 2 * np.einsum("bij,bij->b", y, y)
    active = f > floor
    eye = np.eye(model.w * model.L)
    for it in range(cfg.steps):
        rows = np.flatnonzero(active)
        if rows.size:
            g, J = _jacobian_blocks(model, z[rows])
            r = (y[rows] - g).reshape(rows.size, -1)
            JtJ = np.einsum("bop,boq->bpq", J, J)
            Jtr = np.einsum("bop,bo->bp", J, r)
            pending = np.ones(rows.size, dtype=bool)
            # raise the damping (shortening the step) until the objective does not increase
            for _ in range(MAX_HALVINGS + 1):
                idx = np.flatnonzero(pending)
                rr = rows[idx]
                d = np.linalg.solve(JtJ[idx] + damping[rr, None, None] * eye, Jtr[idx, :, None])[..., 0]
                cand = z[rr] + d.reshape(-1, model.w, model.L)
                f_cand = _sq_error(model, cand, y[rr])
                _check_finite(f_cand, rr, it, keys, n)
                ok = f_cand <= f[rr]
                acc = rr[ok]
                gain = f[acc] - f_cand[ok]
                active[acc[gain <= LM_FTOL * f[acc]]] = False
                z[acc] = cand[ok]
                f[acc] = f_cand[ok]
                damping[acc] = np.maximum(damping[acc] / LM_RELAX, LM_MIN_DAMPING)
                damping[rr[~ok]] *= LM_TIGHTEN
                pending[idx[ok]] = False
                if not pending.any():
                    break
            # a row that cannot improve even with a tiny step has converged
            active[rows[pending]] = False
            active &= f > floor
        if trace is not None:
            trace.append(f.copy())


def invert_batch(model: GanModel, ys: np.ndarray, cfg: InversionConfig = InversionConfig(),
                 keys=None, trace: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Invert a stack of windows ``(n, w, K)``.

    Minimises ``||y - G(z)||^2`` from ``cfg.restarts`` standard normal starts
    per window. With ``solver="gd"`` every iteration tries a gradient step at
    the full rate ``cfg.lr`` and halves it (at most ``MAX_HALVINGS`` times)
    while the step would raise the objective. With ``solver="lm"`` every
    iteration solves ``(J^T J + mu I) d = J^T r`` and raises the damping
    ``mu`` instead; the generator is too ill-conditioned for plain gradient
    descent to converge in a few hundred steps. Either way every trajectory
    is non-increasing. ``keys`` (default ``0..n-1``) seed each window's starts.

    Returns the best latent per window ``(n, w, L)`` and its squared error.
    If ``trace`` is a list, the per-row objective after every iteration is
    appended to it (rows are restart-major).
    """
    cfg.validate()
    ys = np.asarray(ys, dtype=np.float64)
    if ys.ndim != 3 or ys.shape[1:] != (model.w, model.K):
        raise ContractError(f"windows must be (n, {model.w}, {model.K}), got {ys.shape}")
    n = ys.shape[0]
    keys = np.arange(n) if keys is None else np.asarray(keys)
    R = cfg.restarts
    z = _initial_latents(model, keys, cfg).reshape(R * n, model.w, model.L)
    y = np.broadcast_to(ys, (R, n) + ys.shape[1:]).reshape(R * n, model.w, model.K)
    f = _sq_error(model, z, y)
    if trace is not None:
        trace.append(f.copy())
    descend = _descend_lm if cfg.solver == "lm" else _descend_gd
    descend(model, z, y, f, cfg, keys, n, trace)

    f = f.reshape(R, n)
    best = np.argmin(f, axis=0)
    cols = np.arange(n)
    z_best = z.reshape(R, n, model.w, model.L)[best, cols]
    return z_best, f[best, cols]


def invert_latent(model: GanModel, y, cfg: InversionConfig = InversionConfig(), key: int = 0) -> Tensor:
    """Latent z' (w x L) whose generation best matches the window ``y`` (w x K)."""
    arr = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    z, _ = invert_batch(model, arr[None], cfg, keys=[key])
    return Tensor._wrap(z[0])


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def score_components(model: GanModel, ys: np.ndarray, zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction error ||y - G(z')|| and discrimination error |D(y) - D(G(z'))| per window."""
    ys = np.asarray(ys, dtype=np.float64)
    zs = np.asarray(zs, dtype=np.float64)
    recon = generate(model, Tensor._wrap(zs)).data
    r = ys - recon
    rec = np.sqrt(np.einsum("bij,bij->b", r, r))
    disc = np.abs(discriminate(model, Tensor._wrap(ys)).data - discriminate(model, Tensor._wrap(recon)).data)
    return rec, disc


def blend(rec, disc, lam: float):
    return lam * rec + (1.0 - lam) * disc


def score_window(model: GanModel, y, z, lam: float) -> float:
    """Anomaly score of one window given its inverted latent."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda {lam} outside [0, 1]")
    y = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    z = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    rec, disc = score_components(model, y[None], z[None])
    return float(blend(rec[0], disc[0], lam))


def aggregate_steps(window_scores, starts, w: int, n_steps: int, how: str = "mean") -> np.ndarray:
    """Per-step score from the windows covering each step.

    Steps that no window covers take the score of the nearest covered step
    (the earlier one on ties).
    """
    scores = np.asarray(window_scores, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    if scores.shape != starts.shape:
        raise ContractError("one start index per window score")
    if starts.size == 0:
        raise ContractError("no windows to aggregate")
    if starts.min() < 0 or starts.max() + w > n_steps:
        raise ContractError("windows must lie inside [0, n_steps)")
    idx = (starts[:, None] + np.arange(w)[None, :]).ravel()
    vals = np.repeat(scores, w)
    counts = np.bincount(idx, minlength=n_steps)
    if how == "mean":
        out = np.bincount(idx, weights=vals, minlength=n_steps) / np.maximum(counts, 1)
    elif how == "max":
        out = np.full(n_steps, -np.inf)
        np.maximum.at(out, idx, vals)
    else:
        raise ConfigError(f"unknown aggregation {how!r}")
    covered = np.flatnonzero(counts > 0)
    if covered.size < n_steps:
        holes = np.flatnonzero(counts == 0)
        right = np.clip(np.searchsorted(covered, holes), 0, covered.size - 1)
        left = np.clip(right - 1, 0, covered.size - 1)
        use_left = np.abs(holes - covered[left]) <= np.abs(covered[right] - holes)
        out[holes] = out[np.where(use_left, covered[left], covered[right])]
    return out


def classify(class_scores: Mapping[int, np.ndarray], threshold: float) -> np.ndarray:
    """Label each step with the best-fitting device id, or 0 above the threshold.

    ``class_scores`` maps device id to per-step scores under that device's
    model. Ties go to the lowest id; a step is anomalous when its minimum
    score is strictly above ``threshold``.
    """
    if not class_scores:
        raise ConfigError("classification needs at least one device model")
    ids = sorted(class_scores)
    stacked = np.stack([np.asarray(class_scores[c], dtype=np.float64) for c in ids])
    best = np.argmin(stacked, axis=0)
    low = stacked[best, np.arange(stacked.shape[1])]
    return np.where(low > threshold, 0, np.asarray(ids)[best]).astype(np.int64)


# ---------------------------------------------------------------------------
# series level
# ---------------------------------------------------------------------------

@dataclass
class ScoreSeries:
    window_scores: np.ndarray
    latents: np.ndarray | None
    starts: np.ndarray
    step_scores: np.ndarray
    predicted: np.ndarray | None = None
    true_labels: np.ndarray | None = None
    threshold: float | None = None
    class_scores: dict[int, np.ndarray] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        header = ["step", "score", "predicted_label"]
        if self.true_labels is not None:
            header.append("true_label")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i, s in enumerate(self.step_scores):
                row = [i, repr(float(s)), "" if self.predicted is None else int(self.predicted[i])]
                if self.true_labels is not None:
                    row.append(int(self.true_labels[i]))
                writer.writerow(row)


def read_score_csv(path) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Read back (scores, predicted labels, true labels) from a score CSV."""
    scores, pred, true = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            scores.append(float(row["score"]))
            if row.get("predicted_label"):
                pred.append(int(row["predicted_label"]))
            if row.get("true_label"):
                true.append(int(row["true_label"]))
    n = len(scores)
    return (np.array(scores),
            np.array(pred) if len(pred) == n else None,
            np.array(true) if len(true) == n else None)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SATAD_THREADS", "1")))
    except ValueError:
        return 1


def score_windows(model: GanModel, ys: np.ndarray, cfg: ScoreConfig = ScoreConfig(),
                  keys=None, threads: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Invert and score windows; returns (scores, latents).

    Work is split into fixed-size chunks so results do not depend on the
    number of worker threads.
    """
    cfg.validate()
    ys = np.asarray(ys, dtype=np.float64)
    n = ys.shape[0]
    keys = np.arange(n) if keys is None else np.asarray(keys)
    chunks = [slice(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]

    def run(sl):
        z, _ = invert_batch(model, ys[sl], cfg.inversion, keys=keys[sl])
        rec, disc = score_components(model, ys[sl], z)
        return blend(rec, disc, cfg.lam), z

    threads = threads or worker_count()
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(sl) for sl in chunks]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def resolve_threshold(cfg: ScoreConfig, scores: np.ndarray, labels: np.ndarray | None) -> float:
    if not isinstance(cfg.threshold, str):
        return float(cfg.threshold)
    if labels is None:
        raise ConfigError("threshold 'auto' needs labelled calibration data")
    return threshold_sweep(scores, labels, cfg.sweep_points).best_threshold


def detect(models: Mapping[int, GanModel], ts: TimeSeries, window: WindowConfig = WindowConfig(),
           cfg: ScoreConfig = ScoreConfig(), calibration: np.ndarray | None = None,
           threads: int | None = None) -> ScoreSeries:
    """Score a (normalized) series under one model per device type and label it.

    The reported step score is the minimum over device models. With an
    ``auto`` threshold, the best-F1 threshold is taken on ``calibration``
    labels, falling back to the series' own labels.
    """
    cfg.validate()
    if not models:
        raise ConfigError("no device models supplied")
    ws = make_windows(ts, window)
    class_scores, first_latents, first_window = {}, None, None
    for c in sorted(models):
        scores, latents = score_windows(models[c], ws.windows, cfg, keys=ws.start_indices, threads=threads)
        class_scores[c] = aggregate_steps(scores, ws.start_indices, window.w, ts.n_steps, cfg.aggregate)
        if first_latents is None:
            first_latents, first_window = latents, scores
    step_scores = np.min(np.stack([class_scores[c] for c in sorted(class_scores)]), axis=0)
    labels = calibration if calibration is not None else ts.labels
    threshold = resolve_threshold(cfg, step_scores, labels)
    return ScoreSeries(
        window_scores=first_window,
        latents=first_latents,
        starts=ws.start_indices,
        step_scores=step_scores,
        predicted=classify(class_scores, threshold),
        true_labels=ts.labels,
        threshold=threshold,
        class_scores=class_scores,
    )
