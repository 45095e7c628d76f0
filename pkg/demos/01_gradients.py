"""
Gradients by hand
=================

The tape-based autodiff under the GAN, checked against central differences.
Run with ``python3 demos/01_gradients.py``.
"""

import numpy as np

from satad import model as gm
from satad import tensor as T
from satad.tensor import GradTape, Tensor

rng = np.random.default_rng(0)

# %% A single op: softmax over rows, read through a fixed weighting
x = Tensor(rng.standard_normal((3, 4)))
W = rng.standard_normal((3, 4))
with GradTape() as tape:
    tape.watch(x)
    loss = T.sum_all(T.mul(T.softmax_rows(x), Tensor(W)))
analytic = T.backward(tape, loss)[x].data


def f(a):
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return float(np.sum(e / e.sum(axis=1, keepdims=True) * W))


h = 1e-5
numeric = np.zeros_like(x.data)
for idx in np.ndindex(x.shape):
    up, down = x.data.copy(), x.data.copy()
    up[idx] += h
    down[idx] -= h
    numeric[idx] = (f(up) - f(down)) / (2 * h)
print("softmax rows, max abs diff:", np.abs(analytic - numeric).max())

# %% A whole network: d ||G(z)|| / dz for a small generator
m = gm.init(0, w=8, K=2, L=2, h=6)
z = Tensor(rng.standard_normal((8, 2)))
with GradTape() as tape:
    tape.watch(z)
    out = T.l2_norm(gm.generate(m, z))
g = T.backward(tape, out)[z].data

numeric = np.zeros_like(z.data)
for idx in np.ndindex(z.shape):
    up, down = z.data.copy(), z.data.copy()
    up[idx] += h
    down[idx] -= h
    numeric[idx] = (np.linalg.norm(gm.generate(m, Tensor(up)).data)
                    - np.linalg.norm(gm.generate(m, Tensor(down)).data)) / (2 * h)
rel = np.linalg.norm(g - numeric) / np.linalg.norm(numeric)
print(f"generator, relative error: {rel:.2e}")

# %% Attention rows are probability vectors; the position bias shapes them
a = gm.attention_weights(Tensor(rng.standard_normal((8, 6))), m.sub("g")).data
np.set_printoptions(precision=2, suppress=True)
print("row sums:", a.sum(axis=1))
print("generator attention at init (neighbours dominate):")
print(a)
