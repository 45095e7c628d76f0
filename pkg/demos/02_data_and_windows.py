"""
Synthetic sensors, windows and how hard the anomalies are
=========================================================

Builds the default three-channel device, cuts it into windows and asks how
much a detector could possibly get out of it. Two reference scores bracket
the task: the raw window energy (a detector that knows nothing about the
signal) and the distance to the clean signal (a detector that knows
everything). Run with ``python3 demos/02_data_and_windows.py``.
"""

from dataclasses import replace

import numpy as np

from satad.data import (TimeSeries, WindowConfig, apply_normalizer, dedup_filter, default_device_spec,
                        fit_normalizer, make_windows, synth_clean, synth_train_test, window_count)
from satad.detect import aggregate_steps
from satad.evaluate import threshold_sweep

spec = default_device_spec(1)
print("channels:", spec.n_channels, " anomaly events:", spec.anomaly)

train, test = synth_train_test([spec], 20_000, 5_000, seed=42)
print("test anomaly rate: %.3f" % np.mean(test.labels == 0))

stats = fit_normalizer(train)
tr, te = apply_normalizer(train, stats), apply_normalizer(test, stats)

# %% Windows
wc = WindowConfig(32, 4)
ws = make_windows(tr, wc)
print(f"{len(ws)} train windows (formula gives {window_count(tr.n_steps, 32, 4)})")
kept = dedup_filter(ws, 1e-3)
print(f"after near-duplicate filtering: {len(kept)}")

# %% Reference detectors on the test windows
wt = make_windows(te, wc)


def step_f1(window_scores):
    steps = aggregate_steps(window_scores, wt.start_indices, 32, te.n_steps)
    return threshold_sweep(steps, te.labels).best_f1


energy = np.sqrt((wt.windows ** 2).sum(axis=(1, 2)))
print("energy ||y||            best F1 %.3f" % step_f1(energy))

# The clean test signal can be rebuilt from the same seed: synth_train_test
# draws the whole noisy clean stream first, then the anomalies.
rng = np.random.default_rng(42)
clean = synth_clean(replace(spec, n_steps=25_000), rng)[20_000:]
clean = (clean - stats.mean) / stats.std
wc_clean = make_windows(TimeSeries(clean, te.labels), wc).windows
oracle = np.sqrt(((wt.windows - wc_clean) ** 2).sum(axis=(1, 2)))
print("distance to clean       best F1 %.3f  (no detector can know this)" % step_f1(oracle))
