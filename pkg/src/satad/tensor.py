"""
Dense float64 tensors with a reverse-mode gradient tape.

Every operation in this module computes its result eagerly with NumPy. When a
:class:`GradTape` is active on the current thread, the operation is also
recorded together with a closure that maps the output gradient to input
gradients. :func:`backward` replays the tape in reverse.

Shapes are strict: binary elementwise operations require equal shapes, and the
only broadcasting is :func:`add_bias`, which adds a tensor over the trailing
dimensions of another. :func:`matmul` accepts stacked operands so that a batch
of windows can go through a network in one pass.

Examples
--------
>>> x = Tensor([3.0, 4.0])
>>> with GradTape() as tape:
...     tape.watch(x)
...     y = l2_norm(x)
>>> backward(tape, y)[x].data
array([0.6, 0.8])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "active_tape",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "add_bias",
    "scale",
    "tanh",
    "sigmoid",
    "relu",
    "log",
    "clip",
    "square",
    "softmax_rows",
    "l2_norm",
    "sum_all",
    "mean",
    "reshape",
    "elementwise",
]


class Tensor:
    """A dense row-major array of 64-bit floats.

    Tensors compare and hash by identity, which is what the gradient map
    returned by :func:`backward` is keyed on.
    """

    __slots__ = ("data", "__weakref__")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def copy(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={self.data!r})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> "GradTape | None":
    """Return the innermost tape recording on this thread, if any."""
    tapes = _stack()
    return tapes[-1] if tapes else None


class GradTape:
    """Ordered record of the primitive operations applied while active.

    A tape belongs to the thread that created it. Use it as a context manager;
    operations executed inside the ``with`` block are recorded. Tensors created
    outside any operation are leaves. :meth:`watch` registers a leaf explicitly
    so that it appears in the gradient map even when unused.
    """

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._watched: list[Tensor] = []
        self._thread = threading.get_ident()

    def __enter__(self):
        if threading.get_ident() != self._thread:
            raise ContractError("a GradTape is confined to the thread that created it")
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        tapes = _stack()
        if tapes and tapes[-1] is self:
            tapes.pop()
        return False

    def watch(self, *tensors: Tensor) -> None:
        self._watched.extend(tensors)

    def record(self, out: Tensor, inputs: tuple, backward_fn: Callable) -> None:
        self._ops.append((out, inputs, backward_fn))

    def __len__(self):
        return len(self._ops)

    def leaves(self) -> list[Tensor]:
        """Tensors used as inputs but never produced on this tape, plus watched ones."""
        produced = {id(out) for out, _, _ in self._ops}
        seen = set()
        result = []
        for t in self._watched:
            if id(t) not in seen:
                seen.add(id(t))
                result.append(t)
        for _, inputs, _ in self._ops:
            for t in inputs:
                if id(t) not in produced and id(t) not in seen:
                    seen.add(id(t))
                    result.append(t)
        return result

    def clear(self) -> None:
        self._ops.clear()
        self._watched.clear()


def backward(tape: GradTape, loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict:
    """Compute the gradient of a scalar ``loss`` with respect to tape leaves.

    Parameters
    ----------
    tape : GradTape
        The tape that recorded the computation of ``loss``.
    loss : Tensor
        A tensor with exactly one element.
    wrt : iterable of Tensor, optional
        Restrict the result to these tensors. Defaults to every leaf of the tape.

    Returns
    -------
    dict
        Maps each requested tensor to a Tensor of its gradient. Tensors that do
        not influence ``loss`` get zeros.

    Notes
    -----
    The tape is cleared afterwards, so a tape supports one backward pass.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    targets = list(wrt) if wrt is not None else tape.leaves()

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, fn in reversed(tape._ops):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, fn(g)):
            if gi is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    tape.clear()
    return {
        t: Tensor._wrap(grads[id(t)] if id(t) in grads else np.zeros_like(t.data))
        for t in targets
    }


def _emit(arr: np.ndarray, inputs: tuple, fn: Callable) -> Tensor:
    out = Tensor._wrap(arr)
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, fn)
    return out


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of the last two axes.

    ``a`` may carry leading batch axes. ``b`` is either a plain matrix shared
    across the batch or has the same leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} x {b.shape}")
    A, B = a.data, b.data

    def fn(g):
        ga = g @ np.swapaxes(B, -1, -2)
        if shared:
            gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(A, -1, -2) @ g
        return ga, gb

    return _emit(A @ B, (a, b), fn)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose needs at least 2 dimensions, got {a.shape}")
    return _emit(np.swapaxes(a.data, -1, -2).copy(), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (g * B, g * A))


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add ``b`` to every trailing block of ``a`` (a row-wise bias when ``b`` is 1-D)."""
    if b.ndim > a.ndim or a.shape[a.ndim - b.ndim:] != b.shape:
        raise ShapeError(f"bias of shape {b.shape} does not match trailing dims of {a.shape}")

    def fn(g):
        return g, g.reshape((-1,) + b.shape).sum(axis=0)

    return _emit(a.data + b.data, (a, b), fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form stays finite for any finite input
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ContractError("log of a non-positive value")
    A = a.data
    return _emit(np.log(A), (a,), lambda g: (g / A,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into ``[lo, hi]``; gradient is zero where clamping is active."""
    mask = (a.data >= lo) & (a.data <= hi)
    return _emit(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def square(a: Tensor) -> Tensor:
    A = a.data
    return _emit(A * A, (a,), lambda g: (2.0 * g * A,))


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis with per-row max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (a,), fn)


def l2_norm(a: Tensor) -> Tensor:
    """Square root of the sum of squares over all elements, as a 0-d tensor."""
    A = a.data
    n = float(np.sqrt(np.sum(A * A)))

    def fn(g):
        if n == 0.0:
            return (np.zeros_like(A),)
        return (g * A / n,)

    return _emit(np.array(n), (a,), fn)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    """Mean over one axis, or over everything when ``axis`` is None."""
    shape = a.shape
    if axis is None:
        n = a.size
        return _emit(np.array(a.data.mean()), (a,),
                     lambda g: (np.full(shape, float(g) / n),))
    axis = axis % a.ndim
    n = shape[axis]

    def fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _emit(a.data.mean(axis=axis), (a,), fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _emit(out, (a,), lambda g: (g.reshape(old),))


_BINARY = {"add": add, "sub": sub, "mul": mul}
_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(a: Tensor, b, kind: str) -> Tensor:
    """Dispatch a pointwise operation by name.

    ``kind`` is one of ``add``, ``sub``, ``mul`` (``b`` a Tensor), ``scale``
    (``b`` a number), or ``tanh``, ``sigmoid``, ``relu`` (``b`` ignored).
    """
    if kind in _BINARY:
        return _BINARY[kind](a, _as_tensor(b))
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind == "scale":
        return scale(a, b)
    raise ContractError(f"unknown elementwise kind {kind!r}")
