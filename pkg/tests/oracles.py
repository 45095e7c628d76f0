"""Independent reference computations used by the tests."""

from __future__ import annotations

import numpy as np

from satad import tensor as T
from satad.model import generate
from satad.tensor import GradTape, Tensor

FD_STEP = 1e-5
FD_TOL = 1e-4


def numeric_grad(f, arrays: list[np.ndarray], h: float = FD_STEP) -> list[np.ndarray]:
    """Central differences of the scalar function ``f(*arrays)`` w.r.t. every entry."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f(*arrays)
            flat[i] = old - h
            down = f(*arrays)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Norm-wise relative error between two gradients (lists are concatenated).

    Measuring over the whole gradient vector keeps entries whose true value
    is zero from turning rounding noise into large relative errors.
    """
    if isinstance(analytic, (list, tuple)):
        analytic = np.concatenate([np.ravel(a) for a in analytic])
        numeric = np.concatenate([np.ravel(n) for n in numeric])
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def brute_force_windows(M: int, w: int, s: int) -> list[int]:
    """Window starts by direct enumeration: every t with t % s == 0 and t + w <= M."""
    return [t for t in range(M) if t % s == 0 and t + w <= M]


def brute_force_knn(ref: np.ndarray, q: np.ndarray, k: int) -> float:
    d = sorted(float(np.sqrt(np.sum((r - q) ** 2))) for r in ref)
    return sum(d[:k]) / k


def reverse_mode_jacobian(model, z: np.ndarray) -> np.ndarray:
    """Generator Jacobians ``(n, w*K, w*L)`` by reverse mode through the tape.

    Each latent is repeated once per output entry; seeding copy ``o`` with
    the ``o``-th unit vector makes one backward pass return every row.
    """
    P = model.w * model.K
    out = []
    for zb in z:
        reps = Tensor(np.repeat(zb[None], P, axis=0))
        seeds = Tensor(np.eye(P).reshape(P, model.w, model.K))
        with GradTape() as tape:
            tape.watch(reps)
            loss = T.sum_all(T.mul(generate(model, reps), seeds))
        out.append(T.backward(tape, loss, wrt=[reps])[reps].data.reshape(P, -1))
    return np.stack(out)
