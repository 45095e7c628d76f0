"""
Generator and discriminator, each built around one single-head self-attention
block over the time axis of a window.

Generator:      z (w x L) -> input proj -> attention -> tanh FFN -> output proj (w x K)
Discriminator:  x (w x K) -> input proj -> attention -> tanh FFN -> mean over time -> affine -> sigmoid

The attention scores carry a learned (w x w) bias, which is the only source of
time-order information; without it the discriminator would be invariant to
shuffling the steps of a window. Both networks accept a single window or a
stacked batch ``(B, w, .)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import BadMagicError, CheckpointError, ShapeError, TruncatedFileError, VersionError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"SATG"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sHIIII")

_ATTN = ("q", "k", "v", "o")
# initial attention locality for (generator, discriminator)
LOCALITY = (0.5, 0.0)


def parameter_layout(w: int, K: int, L: int, h: int) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of all parameters, in checkpoint order."""
    def attention(prefix):
        out = []
        for name in _ATTN:
            out += [(f"{prefix}.{name}_w", (h, h)), (f"{prefix}.{name}_b", (h,))]
        return out + [(f"{prefix}.pos_bias", (w, w))]

    return (
        [("g.in_w", (L, h)), ("g.in_b", (h,))]
        + attention("g")
        + [("g.ff_w", (h, h)), ("g.ff_b", (h,)), ("g.out_w", (h, K)), ("g.out_b", (K,))]
        + [("d.in_w", (K, h)), ("d.in_b", (h,))]
        + attention("d")
        + [("d.ff_w", (h, h)), ("d.ff_b", (h,)), ("d.head_w", (h, 1)), ("d.head_b", (1,))]
    )


@dataclass
class GanModel:
    w: int
    K: int
    L: int
    h: int
    params: dict[str, Tensor]

    def generator_params(self) -> list[Tensor]:
        return [p for n, p in self.params.items() if n.startswith("g.")]

    def discriminator_params(self) -> list[Tensor]:
        return [p for n, p in self.params.items() if n.startswith("d.")]

    def copy(self) -> "GanModel":
        return GanModel(self.w, self.K, self.L, self.h,
                        {n: p.copy() for n, p in self.params.items()})

    def sub(self, prefix: str) -> dict[str, Tensor]:
        """Parameters of one network with the ``g.``/``d.`` prefix stripped."""
        cut = len(prefix) + 1
        return {n[cut:]: p for n, p in self.params.items() if n.startswith(prefix + ".")}


def init(seed: int, w: int, K: int, L: int, h: int,
         locality: tuple[float, float] = LOCALITY) -> GanModel:
    """Glorot-uniform weight matrices and zero biases, deterministic in ``seed``.

    Parameters
    ----------
    locality : (float, float)
        Slopes for the generator and discriminator position biases, which
        start at ``-slope * |t - u|``. A positive generator slope makes each
        step attend to its neighbours at first, so early samples are already
        smooth in time. A zero discriminator slope starts D order-blind; the
        bias still receives gradient and picks up order from the data.
    """
    for name, v in (("w", w), ("K", K), ("L", L), ("h", h)):
        if int(v) < 1:
            raise ShapeError(f"{name} must be positive, got {v}")
    rng = np.random.default_rng(seed)
    t = np.arange(w)
    dist = np.abs(t[:, None] - t[None, :]).astype(np.float64)
    slope = {"g": float(locality[0]), "d": float(locality[1])}
    params = {}
    for name, shape in parameter_layout(w, K, L, h):
        if name.endswith("pos_bias"):
            params[name] = Tensor._wrap(-slope[name[0]] * dist)
        elif len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = Tensor._wrap(rng.uniform(-bound, bound, size=shape))
        else:
            params[name] = Tensor._wrap(np.zeros(shape))
    return GanModel(w, K, L, h, params)


def _linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return T.add_bias(T.matmul(x, weight), bias)


def attention_weights(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Row-stochastic (w x w) attention matrix softmax(Q K^T / sqrt(h) + position bias)."""
    q = _linear(x, p["q_w"], p["q_b"])
    k = _linear(x, p["k_w"], p["k_b"])
    h = x.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(h))
    if "pos_bias" in p:
        scores = T.add_bias(scores, p["pos_bias"])
    return T.softmax_rows(scores)


def attention_block(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Residual single-head self-attention: x + (A V) W_o + b_o."""
    a = attention_weights(x, p)
    v = _linear(x, p["v_w"], p["v_b"])
    return T.add(x, _linear(T.matmul(a, v), p["o_w"], p["o_b"]))


def _check(x: Tensor, w: int, d: int, what: str) -> None:
    if x.ndim not in (2, 3) or x.shape[-2:] != (w, d):
        raise ShapeError(f"{what} must have trailing shape ({w}, {d}), got {x.shape}")


def generate(model: GanModel, z: Tensor) -> Tensor:
    """Map latent windows (w x L, optionally batched) to data windows (w x K)."""
    _check(z, model.w, model.L, "latent")
    p = model.sub("g")
    a = attention_block(_linear(z, p["in_w"], p["in_b"]), p)
    f = T.tanh(_linear(a, p["ff_w"], p["ff_b"]))
    return _linear(f, p["out_w"], p["out_b"])


def generate_with_jacobian(model: GanModel, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Generated windows ``(n, w, K)`` and their Jacobians ``(n, w*K, w*L)`` for latents ``(n, w, L)``.

    Forward-mode differentiation of :func:`generate` along every latent
    entry at once, written out for this architecture. Perturbing latent
    entry ``(t, l)`` moves only row ``t`` of the embedded input, so the
    attention-score tangent is nonzero only in row ``t`` and column ``t``.
    Rows and columns of the Jacobian follow the row-major flattening of the
    window and the latent.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3 or z.shape[1:] != (model.w, model.L):
        raise ShapeError(f"latents must be (n, {model.w}, {model.L}), got {z.shape}")
    p = {k: v.data for k, v in model.sub("g").items()}
    n, w, L, h = z.shape[0], model.w, model.L, model.h
    P = w * L
    rt = 1.0 / math.sqrt(h)

    x = z @ p["in_w"] + p["in_b"]
    q = x @ p["q_w"] + p["q_b"]
    k = x @ p["k_w"] + p["k_b"]
    v = x @ p["v_w"] + p["v_b"]
    s = q @ np.swapaxes(k, -1, -2) * rt
    if "pos_bias" in p:
        s = s + p["pos_bias"]
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    A = e / e.sum(axis=-1, keepdims=True)
    a = x + (A @ v) @ p["o_w"] + p["o_b"]
    f = np.tanh(a @ p["ff_w"] + p["ff_b"])
    y = f @ p["out_w"] + p["out_b"]

    # tangent j = t*L + l perturbs row t of x by in_w[l]
    t_of, l_of = np.divmod(np.arange(P), L)
    dx_row = p["in_w"]                                   # (L, h)
    dq_row, dk_row, dv_row = dx_row @ p["q_w"], dx_row @ p["k_w"], dx_row @ p["v_w"]
    alpha = np.einsum("nuh,lh->nlu", k, dq_row) * rt     # row t of dS
    beta = np.einsum("nsh,lh->nsl", q, dk_row) * rt      # column t of dS
    dS = np.zeros((n, P, w, w))
    idx = np.arange(P)
    dS[:, idx, t_of, :] += alpha[:, l_of, :]
    # separated advanced indices put the tangent axis first: (P, n, w)
    dS[:, idx, :, t_of] += beta[:, :, l_of].transpose(2, 0, 1)
    AdS = A[:, None] * dS
    dA = AdS - A[:, None] * AdS.sum(axis=-1, keepdims=True)
    dc = dA @ v[:, None]                                 # (n, P, w, h)
    # A @ dv, where dv is dv_row[l] on row t only
    dc += A[:, :, t_of].transpose(0, 2, 1)[..., None] * dv_row[l_of][None, :, None, :]
    da = dc @ p["o_w"]
    da[:, idx, t_of, :] += dx_row[l_of]
    dy = ((1.0 - f * f)[:, None] * (da @ p["ff_w"])) @ p["out_w"]   # (n, P, w, K)
    J = dy.reshape(n, P, w * model.K).transpose(0, 2, 1)
    return y, J


def discriminate_logit(model: GanModel, x: Tensor) -> Tensor:
    _check(x, model.w, model.K, "window")
    p = model.sub("d")
    a = attention_block(_linear(x, p["in_w"], p["in_b"]), p)
    f = T.tanh(_linear(a, p["ff_w"], p["ff_b"]))
    pooled = T.mean(f, axis=-2)
    batched = x.ndim == 3
    pooled = T.reshape(pooled, (x.shape[0] if batched else 1, model.h))
    logit = _linear(pooled, p["head_w"], p["head_b"])
    return T.reshape(logit, (x.shape[0],) if batched else ())


def discriminate(model: GanModel, x: Tensor) -> Tensor:
    """Realness score in (0, 1): a 0-d tensor for one window, shape (B,) for a batch."""
    return T.sigmoid(discriminate_logit(model, x))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save(model: GanModel, path) -> None:
    chunks = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                           model.w, model.K, model.L, model.h)]
    for name, shape in parameter_layout(model.w, model.K, model.L, model.h):
        arr = model.params[name].data
        if arr.shape != shape:
            raise ShapeError(f"parameter {name} has shape {arr.shape}, expected {shape}")
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load(path) -> GanModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a model checkpoint")
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, w, K, L, h = _HEADER.unpack_from(blob)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    layout = parameter_layout(w, K, L, h)
    need = _HEADER.size + 8 * sum(int(np.prod(s)) for _, s in layout)
    if len(blob) < need:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes, expected {need}")
    if len(blob) > need:
        raise CheckpointError(f"{path}: {len(blob) - need} unexpected trailing bytes")
    params = {}
    offset = _HEADER.size
    for name, shape in layout:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        params[name] = Tensor._wrap(arr.astype(np.float64))
        offset += 8 * n
    return GanModel(w, K, L, h, params)
