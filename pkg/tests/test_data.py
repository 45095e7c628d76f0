import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from satad.data import (
    AnomalySpec,
    CsvSchema,
    SynthSpec,
    TimeSeries,
    WindowConfig,
    apply_normalizer,
    dedup_filter,
    default_device_spec,
    device_windows,
    fit_normalizer,
    invert_normalizer,
    label_runs,
    load_csv,
    make_windows,
    read_cache,
    synth_generate,
    synth_train_test,
    window_count,
    write_cache,
    write_csv,
)
from satad.errors import (
    BadMagicError,
    ConfigError,
    MissingFileError,
    NonNumericError,
    RaggedRowError,
    TruncatedFileError,
    UnknownLabelError,
    VersionError,
)

from oracles import brute_force_windows


def _write(tmp_path, text, name="f.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- CSV ------------------------------------------------------------------

def test_load_csv_without_labels(tmp_path):
    ts = load_csv(_write(tmp_path, "a,b\n1,2\n3,4\n5,6\n"))
    assert ts.values.shape == (3, 2) and ts.labels is None


def test_load_csv_with_timestamp_and_labels(tmp_path):
    ts = load_csv(_write(tmp_path, "timestamp,a,label\n0,1.5,1\n1,2.5,0\n"))
    np.testing.assert_array_equal(ts.labels, [1, 0])
    np.testing.assert_array_equal(ts.values[:, 0], [1.5, 2.5])


@pytest.mark.parametrize("text,error,row,column", [
    ("a,b\n1,NaN\n", NonNumericError, 2, "b"),
    ("a,b\n1,2\n1,x\n", NonNumericError, 3, "b"),
    ("a,b\n1,2\n1\n", RaggedRowError, 3, None),
    ("a,label\n1,1\n2,z\n", UnknownLabelError, 3, "label"),
    ("a,label\n1,-1\n", UnknownLabelError, 2, "label"),
])
def test_load_csv_errors_name_row_and_column(tmp_path, text, error, row, column):
    with pytest.raises(error) as info:
        load_csv(_write(tmp_path, text))
    assert info.value.row == row
    assert info.value.column == column


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(MissingFileError):
        load_csv(tmp_path / "absent.csv")


def test_load_csv_allowed_labels(tmp_path):
    with pytest.raises(UnknownLabelError):
        load_csv(_write(tmp_path, "a,label\n1,3\n"), CsvSchema(allowed_labels=frozenset({0, 1})))


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    ts = TimeSeries(rng.standard_normal((20, 3)), rng.integers(0, 3, 20))
    write_csv(ts, tmp_path / "x.csv")
    back = load_csv(tmp_path / "x.csv")
    np.testing.assert_array_equal(back.values, ts.values)
    np.testing.assert_array_equal(back.labels, ts.labels)


# --- binary cache ----------------------------------------------------------

def test_cache_round_trip(tmp_path):
    ts = TimeSeries(np.arange(12.0).reshape(6, 2), [1, 1, 0, 1, 2, 2])
    write_cache(ts, tmp_path / "c.bin")
    back = read_cache(tmp_path / "c.bin")
    np.testing.assert_array_equal(back.values, ts.values)
    np.testing.assert_array_equal(back.labels, ts.labels)
    write_cache(TimeSeries(ts.values), tmp_path / "n.bin")
    assert read_cache(tmp_path / "n.bin").labels is None


def test_cache_errors(tmp_path):
    ts = TimeSeries(np.ones((4, 2)), [1, 1, 1, 1])
    write_cache(ts, tmp_path / "c.bin")
    blob = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + blob[4:])
    (tmp_path / "ver.bin").write_bytes(blob[:4] + b"\x09\x00" + blob[6:])
    (tmp_path / "trunc.bin").write_bytes(blob[:30])
    with pytest.raises(BadMagicError):
        read_cache(tmp_path / "magic.bin")
    with pytest.raises(VersionError):
        read_cache(tmp_path / "ver.bin")
    with pytest.raises(TruncatedFileError):
        read_cache(tmp_path / "trunc.bin")


# --- normalization ----------------------------------------------------------

def test_normalizer_hand_example():
    stats = fit_normalizer(TimeSeries(np.array([[0.0], [2.0]])))
    assert stats.mean[0] == 1.0 and stats.std[0] == 1.0
    np.testing.assert_array_equal(apply_normalizer(TimeSeries([[0.0], [2.0]]), stats).values[:, 0], [-1, 1])


def test_constant_channel_normalizes_to_zero():
    ts = TimeSeries(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
    out = apply_normalizer(ts, fit_normalizer(ts))
    assert np.all(out.values[:, 0] == 0)


def test_normalized_training_data_has_zero_mean_unit_std():
    ts = TimeSeries(np.random.default_rng(1).normal(3, 7, (500, 3)))
    out = apply_normalizer(ts, fit_normalizer(ts)).values
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(out.std(axis=0), 1, atol=1e-9)


def test_normalize_round_trip_and_idempotence():
    ts = TimeSeries(np.random.default_rng(2).normal(-4, 3, (100, 2)))
    stats = fit_normalizer(ts)
    back = invert_normalizer(apply_normalizer(ts, stats), stats)
    np.testing.assert_allclose(back.values, ts.values, rtol=1e-9)
    norm = apply_normalizer(ts, stats)
    again = apply_normalizer(norm, fit_normalizer(norm))
    np.testing.assert_allclose(again.values, norm.values, atol=1e-9)


# --- windowing ---------------------------------------------------------------

def test_windows_hand_example():
    ws = make_windows(TimeSeries(np.arange(10.0)), WindowConfig(4, 2))
    np.testing.assert_array_equal(ws.start_indices, [0, 2, 4, 6])
    assert len(ws) == 4


def test_single_window_when_w_equals_m():
    for s in (1, 3, 5):
        assert len(make_windows(TimeSeries(np.arange(5.0)), WindowConfig(5, s))) == 1


def test_window_labels_any_anomaly_rule():
    ws = make_windows(TimeSeries(np.zeros(4), [1, 1, 0, 1]), WindowConfig(2, 2))
    np.testing.assert_array_equal(ws.window_labels, [1, 0])


def test_window_label_majority_ties_to_lowest_id():
    ws = make_windows(TimeSeries(np.zeros(4), [2, 2, 1, 1]), WindowConfig(4, 1))
    assert ws.window_labels[0] == 1


@pytest.mark.parametrize("w,s", [(0, 1), (2, 0), (2, 3), (11, 1)])
def test_invalid_window_config(w, s):
    with pytest.raises(ConfigError):
        make_windows(TimeSeries(np.zeros(10)), WindowConfig(w, s))


def test_windows_match_brute_force_for_small_series():
    for M in range(1, 51):
        ts = TimeSeries(np.arange(M, dtype=float)[:, None] * [1.0, -1.0])
        for w in range(1, M + 1):
            for s in range(1, w + 1):
                ws = make_windows(ts, WindowConfig(w, s))
                starts = brute_force_windows(M, w, s)
                assert ws.start_indices.tolist() == starts
                assert len(ws) == window_count(M, w, s) == (M - w) // s + 1
                for k, a in enumerate(starts):
                    np.testing.assert_array_equal(ws.windows[k], ts.values[a:a + w])


# --- dedup ----------------------------------------------------------------------

def _windows(arrs):
    return make_windows(TimeSeries(np.concatenate(arrs)), WindowConfig(len(arrs[0]), len(arrs[0])))


def test_dedup_identical_windows_keeps_first():
    ws = _windows([np.ones(4)] * 5)
    assert dedup_filter(ws, 1e-6).start_indices.tolist() == [0]


def test_dedup_zero_threshold_keeps_all():
    ws = _windows([np.ones(4)] * 5)
    assert len(dedup_filter(ws, 0.0)) == 5


def test_dedup_compares_against_last_retained():
    A, eps, B = np.zeros(4), np.full(4, 0.01), np.ones(4)
    ws = _windows([A, A + eps, B])
    t = 0.5  # MSE(A, A+eps) = 1e-4 < t <= MSE(A, B) = 1
    kept = dedup_filter(ws, t)
    assert kept.start_indices.tolist() == [0, 8]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 0.5))
def test_dedup_is_a_subsequence(seed, thr):
    ws = make_windows(TimeSeries(np.random.default_rng(seed).standard_normal((60, 2)) * 0.3),
                      WindowConfig(6, 3))
    kept = dedup_filter(ws, thr)
    idx = [int(np.flatnonzero(ws.start_indices == a)[0]) for a in kept.start_indices]
    assert idx == sorted(idx) and idx[0] == 0
    for k, i in enumerate(idx):
        np.testing.assert_array_equal(kept.windows[k], ws.windows[i])


# --- synthetic data --------------------------------------------------------------

def test_synth_rate_zero_has_no_anomalies():
    ts = synth_generate(replace(default_device_spec(2), anomaly=AnomalySpec(rate=0.0)), 0)
    assert np.all(ts.labels == 2)


def test_synth_rate_out_of_range():
    with pytest.raises(ConfigError):
        synth_generate(SynthSpec(anomaly=AnomalySpec(rate=1.5)), 0)


def test_synth_is_deterministic():
    a = synth_generate(default_device_spec(1), 7)
    b = synth_generate(default_device_spec(1), 7)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_synth_anomaly_count_within_binomial_bounds():
    M, p = 10_000, 0.05
    sd = np.sqrt(M * p * (1 - p))
    for seed in range(5):
        n = int(np.sum(synth_generate(SynthSpec(n_steps=M, anomaly=AnomalySpec(rate=p)), seed).labels == 0))
        assert abs(n - M * p) <= 3 * sd


def test_train_test_split_layout():
    specs = [default_device_spec(1), default_device_spec(2)]
    tr, te = synth_train_test(specs, 300, 200, 3)
    assert tr.n_steps == 600 and te.n_steps == 400
    assert not np.any(tr.labels == 0)
    assert [r[0] for r in label_runs(tr.labels)] == [1, 2]
    ws = device_windows(tr, WindowConfig(32, 4), 2)
    assert ws.start_indices.min() >= 300
