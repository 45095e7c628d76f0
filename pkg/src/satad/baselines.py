"""
Classical baselines scored the same way as the GAN detector: PCA
reconstruction error and mean k-nearest-neighbour distance, both on flattened
windows by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TimeSeries, WindowConfig, make_windows
from .detect import ScoreSeries, aggregate_steps
from .errors import ConfigError, ContractError


@dataclass
class PcaModel:
    mean: np.ndarray          # (d,)
    axes: np.ndarray          # (d, r), orthonormal columns
    variances: np.ndarray     # (r,)

    @property
    def r(self) -> int:
        return self.axes.shape[1]


def _power_iteration(cov: np.ndarray, prev: np.ndarray, rng: np.random.Generator,
                     tol: float, max_iter: int) -> np.ndarray:
    d = cov.shape[0]

    def orthogonalize(v):
        for _ in range(2):
            if prev.shape[1]:
                v = v - prev @ (prev.T @ v)
        return v

    v = orthogonalize(rng.standard_normal(d))
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        u = orthogonalize(cov @ v)
        norm = np.linalg.norm(u)
        if norm < 1e-300:
            # remaining spectrum is zero: any orthonormal completion is an eigenvector
            break
        u /= norm
        if u @ v < 0:
            u = -u
        done = np.linalg.norm(u - v) < tol
        v = u
        if done:
            break
    v = orthogonalize(v)
    return v / np.linalg.norm(v)


def pca_fit(vectors, r: int, tol: float = 1e-10, max_iter: int = 1000, seed: int = 0,
            explained: float | None = None) -> PcaModel:
    """Top-``r`` principal axes by power iteration with deflation.

    Parameters
    ----------
    vectors : array (n, d)
        Training vectors, one per row.
    r : int
        Number of axes to keep, ``1 <= r <= d``.
    tol, max_iter :
        Convergence tolerance on the change of each unit axis, and the
        iteration cap per axis.
    explained : float, optional
        Stop before ``r`` axes once this fraction of the total variance is
        captured.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ContractError("pca_fit needs an (n, d) array")
    d = X.shape[1]
    if not 1 <= r <= d:
        raise ConfigError(f"r={r} must lie in [1, {d}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / X.shape[0]
    total = float(np.trace(cov))
    rng = np.random.default_rng(seed)
    axes = np.zeros((d, 0))
    variances = []
    A = cov.copy()
    for _ in range(r):
        v = _power_iteration(A, axes, rng, tol, max_iter)
        lam = float(v @ cov @ v)
        variances.append(lam)
        A = A - lam * np.outer(v, v)
        axes = np.column_stack([axes, v])
        if explained is not None and total > 0 and sum(variances) >= explained * total:
            break
    return PcaModel(mean, axes, np.array(variances))


def pca_score(model: PcaModel, vectors) -> np.ndarray | float:
    """Norm of the residual left after projecting onto the retained axes."""
    V = np.asarray(vectors, dtype=np.float64)
    single = V.ndim == 1
    V = np.atleast_2d(V) - model.mean
    resid = V - (V @ model.axes) @ model.axes.T
    out = np.sqrt(np.einsum("ij,ij->i", resid, resid))
    return float(out[0]) if single else out


@dataclass
class KnnModel:
    reference: np.ndarray     # (n, d)
    k: int


def knn_fit(vectors, k: int = 5) -> KnnModel:
    ref = np.asarray(vectors, dtype=np.float64)
    if ref.ndim != 2 or ref.shape[0] < 1:
        raise ContractError("knn_fit needs an (n, d) array")
    if not 1 <= k <= ref.shape[0]:
        raise ConfigError(f"k={k} must lie in [1, {ref.shape[0]}]")
    return KnnModel(ref.copy(), int(k))


def knn_score(model: KnnModel, vectors, chunk: int = 16) -> np.ndarray | float:
    """Mean Euclidean distance to the k nearest reference vectors (exact search)."""
    Q = np.asarray(vectors, dtype=np.float64)
    single = Q.ndim == 1
    Q = np.atleast_2d(Q)
    k = model.k
    out = np.empty(Q.shape[0])
    for i in range(0, Q.shape[0], chunk):
        diff = Q[i:i + chunk, None, :] - model.reference[None, :, :]
        dist = np.sqrt(np.einsum("qnd,qnd->qn", diff, diff))
        if k < dist.shape[1]:
            dist = np.partition(dist, k - 1, axis=1)[:, :k]
        out[i:i + chunk] = dist.mean(axis=1)
    return float(out[0]) if single else out


def flatten_windows(ts: TimeSeries, window: WindowConfig):
    ws = make_windows(ts, window)
    return ws, ws.windows.reshape(len(ws), -1)


def baseline_series(method: str, train: TimeSeries, test: TimeSeries,
                    window: WindowConfig = WindowConfig(), pca_r: int | None = None,
                    pca_fraction: float = 0.95, knn_k: int = 5,
                    reference_stride: int | None = None) -> ScoreSeries:
    """Fit a baseline on normal windows and score a (normalized) test series.

    ``reference_stride`` subsamples the training windows (every n-th window)
    to bound the KNN reference set.
    """
    _, train_vecs = flatten_windows(train, window)
    if reference_stride:
        train_vecs = train_vecs[::reference_stride]
    ws, test_vecs = flatten_windows(test, window)
    if method == "pca":
        if pca_r:
            model = pca_fit(train_vecs, pca_r)
        else:
            model = pca_fit(train_vecs, train_vecs.shape[1], explained=pca_fraction)
        scores = pca_score(model, test_vecs)
    elif method == "knn":
        scores = knn_score(knn_fit(train_vecs, knn_k), test_vecs)
    else:
        raise ConfigError(f"unknown baseline {method!r}")
    return ScoreSeries(
        window_scores=scores, latents=None, starts=ws.start_indices,
        step_scores=aggregate_steps(scores, ws.start_indices, window.w, test.n_steps),
        true_labels=test.labels,
    )
