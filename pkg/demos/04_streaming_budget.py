"""
Can scoring keep up with the sensors?
=====================================

A fleet producing 4,628,800 readings a day delivers 53.6 per second, so a
detector has to score at least 54 new steps every second. Windows advance
by ``s`` steps, so each scored window buys ``s`` steps of budget. This script
times single-window scoring with and without latent inversion on an
untrained model. Gradient-descent steps cost the same for any weights; the
damped solver stops early on windows it has already fitted, so its rate
varies somewhat with the model.
Run with ``python3 demos/04_streaming_budget.py``.
"""

import math
import time

import numpy as np

from satad import model as gm
from satad.detect import InversionConfig, ScoreConfig, score_windows

target = math.ceil(4_628_800 / 86_400)
print("target:", target, "steps/s")

w, s = 32, 4
m = gm.init(0, w, 3, 2, 16)
stream = np.random.default_rng(0).standard_normal((2_000, 3))


def rate(cfg, seconds=3.0):
    n, t0 = 0, time.perf_counter()
    while time.perf_counter() - t0 < seconds:
        start = (n * s) % (stream.shape[0] - w)
        score_windows(m, stream[start:start + w][None], cfg, keys=[n], threads=1)
        n += 1
    elapsed = time.perf_counter() - t0
    return n * s / elapsed, 1e3 * elapsed / n


for label, inv in (("score only (no inversion)", InversionConfig(steps=0)),
                   ("damped Gauss-Newton, 10 steps", InversionConfig(steps=10, solver="lm")),
                   ("gradient descent, 100 steps", InversionConfig(steps=100, solver="gd"))):
    sps, ms = rate(ScoreConfig(inversion=inv))
    verdict = "meets" if sps >= target else "misses"
    print(f"{label:31s} {sps:8.0f} steps/s ({ms:6.1f} ms per window) {verdict} the budget")
