"""Seeded finite-difference checks for every primitive and both networks."""

from __future__ import annotations

import numpy as np

from satad import model as gm
from satad import tensor as T
from satad import train as tr
from satad.tensor import GradTape, Tensor

from oracles import numeric_grad, rel_error


def _away(rng, shape, points, gap=0.02, scale=2.0):
    """Uniform values kept at least ``gap`` away from the kinks in ``points``."""
    x = rng.uniform(-scale, scale, size=shape)
    for p in points:
        close = np.abs(x - p) < gap
        x[close] = p + np.where(x[close] >= p, gap, -gap)
    return x


def _matmul(rng):
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((4, 2)) if rng.random() < 0.5 else rng.standard_normal((2, 4, 2))
    return T.matmul, [a, b]


def _bias(rng):
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((4,)) if rng.random() < 0.5 else rng.standard_normal((3, 4))
    return T.add_bias, [a, b]


def _binary(op):
    return lambda rng: (op, [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))])


def _unary(op, sample=None):
    return lambda rng: (op, [sample(rng) if sample else rng.standard_normal((3, 4)) * 2])


def _scale(rng):
    c = float(rng.uniform(-3, 3))
    return (lambda a: T.scale(a, c)), [rng.standard_normal((3, 4))]


def _clip(rng):
    return (lambda a: T.clip(a, -0.5, 0.5)), [_away(rng, (3, 4), (-0.5, 0.5), scale=1.0)]


def _mean(rng):
    axis = [None, -1, -2, 0][int(rng.integers(4))]
    return (lambda a: T.mean(a, axis=axis)), [rng.standard_normal((2, 3, 4))]


PRIMITIVES = {
    "matmul": _matmul,
    "transpose": _unary(T.transpose, lambda r: r.standard_normal((2, 3, 4))),
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "add_bias": _bias,
    "scale": _scale,
    "tanh": _unary(T.tanh),
    "sigmoid": _unary(T.sigmoid),
    "relu": _unary(T.relu, lambda r: _away(r, (3, 4), (0.0,))),
    "log": _unary(T.log, lambda r: r.uniform(0.3, 3.0, size=(3, 4))),
    "clip": _clip,
    "square": _unary(T.square),
    "softmax_rows": _unary(T.softmax_rows, lambda r: r.standard_normal((2, 3, 5)) * 2),
    "l2_norm": _unary(T.l2_norm),
    "sum_all": _unary(T.sum_all),
    "mean": _mean,
    "reshape": (lambda r: ((lambda a: T.reshape(a, (2, 6))), [r.standard_normal((3, 4))])),
}


def check_primitive(name: str, seed: int) -> float:
    """Relative error of the tape gradient of ``sum(op(inputs) * W)``."""
    rng = np.random.default_rng([seed, len(name)] + [ord(c) for c in name])
    op, arrays = PRIMITIVES[name](rng)
    weight = None

    def value(*arrs):
        nonlocal weight
        out = op(*[Tensor._wrap(a) for a in arrs])
        if weight is None:
            weight = rng.standard_normal(out.shape)
        return float(np.sum(out.data * weight))

    value(*arrays)
    inputs = [Tensor._wrap(a.copy()) for a in arrays]
    with GradTape() as tape:
        tape.watch(*inputs)
        loss = T.sum_all(T.mul(op(*inputs), Tensor._wrap(weight)))
    grads = T.backward(tape, loss, wrt=inputs)
    return rel_error([grads[t].data for t in inputs], numeric_grad(value, arrays))


def tiny_model(seed: int, w: int = 4, K: int = 2, L: int = 2, h: int = 3) -> gm.GanModel:
    m = gm.init(seed, w, K, L, h)
    rng = np.random.default_rng(seed + 10_000)
    # nonzero biases so that every parameter carries gradient signal
    for p in m.params.values():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    return m


def check_network(which: str, seed: int) -> float:
    """Gradient of a scalar network output w.r.t. the input and all parameters.

    ``which`` is ``generator`` (l2 norm of G(z)), ``discriminator`` (D(x)),
    ``d_loss`` or ``g_loss``.
    """
    m = tiny_model(seed)
    rng = np.random.default_rng(seed)
    if which in ("generator", "g_loss"):
        x = rng.standard_normal((2, m.w, m.L)) if which == "g_loss" else rng.standard_normal((m.w, m.L))
    else:
        x = rng.standard_normal((m.w, m.K))
    z = rng.standard_normal((2, m.w, m.L))
    names = list(m.params)

    def forward(model, xt):
        if which == "generator":
            return T.l2_norm(gm.generate(model, xt))
        if which == "discriminator":
            return gm.discriminate(model, xt)
        if which == "d_loss":
            return tr.d_loss(model, T.reshape(xt, (1, model.w, model.K)), z)
        return tr.g_loss(model, xt)

    def value(xa, *params):
        mm = gm.GanModel(m.w, m.K, m.L, m.h, {n: Tensor._wrap(p) for n, p in zip(names, params)})
        return forward(mm, Tensor._wrap(xa)).item()

    arrays = [x] + [m.params[n].data.copy() for n in names]
    xt = Tensor._wrap(x.copy())
    with GradTape() as tape:
        tape.watch(xt, *m.params.values())
        loss = forward(m, xt)
    targets = [xt] + [m.params[n] for n in names]
    grads = T.backward(tape, loss, wrt=targets)
    return rel_error([grads[t].data for t in targets], numeric_grad(value, arrays))


NETWORK_CHECKS = ("generator", "discriminator", "d_loss", "g_loss")
