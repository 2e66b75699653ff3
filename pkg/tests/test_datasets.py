import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hargan import datasets as D
from hargan.datasets import (
    DataError,
    DatasetProfile,
    RecordStream,
    SensorWindow,
    WindowedDataset,
)
from hargan.tensor import make_rng
from hargan.toydata import TOY_PROFILE, toy_windows, write_toy_csv

SMALL = DatasetProfile("small", channels=2, window_len=4, num_classes=3,
                       channel_names=("a", "b"), sample_rate=10.0)


def make_stream(subject, labels, rng=None, channels=2):
    labels = np.asarray(labels)
    rng = rng or make_rng(0)
    data = rng.standard_normal((channels, labels.size))
    return RecordStream(subject, 10.0, data, labels)


def window_count_oracle(labels, length, stride):
    """Brute-force enumeration of uniform-label window starts."""
    count = 0
    for start in range(0, len(labels) - length + 1, stride):
        if len(set(labels[start:start + length])) == 1:
            count += 1
    return count


# -- profiles ------------------------------------------------------------------


def test_builtin_profiles_match_published_shapes():
    assert (D.PAMAP2_PROFILE.channels, D.PAMAP2_PROFILE.window_len) == (27, 100)
    assert D.PAMAP2_PROFILE.num_classes == 7
    assert (D.RWHAR_PROFILE.channels, D.RWHAR_PROFILE.window_len) == (6, 50)
    assert D.RWHAR_PROFILE.num_classes == 8


def test_profile_rejects_duplicate_channel_names():
    with pytest.raises(DataError):
        DatasetProfile("bad", 2, 4, 2, channel_names=("x", "x"))


def test_profile_rejects_single_class():
    with pytest.raises(DataError):
        DatasetProfile("bad", 2, 4, 1)


# -- canonical csv ----------------------------------------------------------------


def write_csv(path, rows, channels=2):
    cols = ",".join(f"ch_{i}" for i in range(channels))
    with open(path, "w") as fh:
        fh.write(f"subject,activity,t,{cols}\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def test_canonical_csv_two_rows(tmp_path):
    p = tmp_path / "d.csv"
    write_csv(p, [[1, 0, 0, 1.5, 2.5], [1, 0, 1, 3.5, 4.5]])
    streams = D.load_canonical_csv(p)
    assert len(streams) == 1
    assert streams[0].length == 2
    np.testing.assert_array_equal(streams[0].channels, [[1.5, 3.5], [2.5, 4.5]])


def test_canonical_csv_interpolates_nan(tmp_path):
    p = tmp_path / "d.csv"
    write_csv(p, [[1, 0, 0, 1.0, 0.0], [1, 0, 1, "nan", 0.0], [1, 0, 2, 3.0, 0.0]])
    streams = D.load_canonical_csv(p)
    assert streams[0].channels[0, 1] == pytest.approx(2.0)


def test_canonical_csv_edge_nan_nearest_fill(tmp_path):
    p = tmp_path / "d.csv"
    write_csv(p, [[1, 0, 0, "nan", 0.0], [1, 0, 1, 2.0, 0.0], [1, 0, 2, "nan", 0.0]])
    streams = D.load_canonical_csv(p)
    np.testing.assert_array_equal(streams[0].channels[0], [2.0, 2.0, 2.0])


def test_canonical_csv_three_subjects(tmp_path):
    p = tmp_path / "d.csv"
    rows = []
    lengths = {1: 3, 2: 5, 3: 2}
    for subject, n in lengths.items():
        for t in range(n):
            rows.append([subject, 0, t, 1.0, 2.0])
    write_csv(p, rows)
    streams = D.load_canonical_csv(p)
    assert [s.subject_id for s in streams] == [1, 2, 3]
    assert [s.length for s in streams] == [3, 5, 2]


def test_canonical_csv_malformed_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("subj,act,t,ch_0\n1,0,0,1.0\n")
    with pytest.raises(DataError):
        D.load_canonical_csv(p)


def test_canonical_csv_non_monotone_time(tmp_path):
    p = tmp_path / "d.csv"
    write_csv(p, [[1, 0, 5, 1.0, 1.0], [1, 0, 2, 1.0, 1.0]])
    with pytest.raises(DataError):
        D.load_canonical_csv(p)


def test_canonical_csv_all_invalid_channel(tmp_path):
    p = tmp_path / "d.csv"
    write_csv(p, [[1, 0, 0, "nan", 1.0], [1, 0, 1, "nan", 1.0]])
    with pytest.raises(DataError):
        D.load_canonical_csv(p)


# -- pamap2 adapter -----------------------------------------------------------------


def write_pamap2_fixture(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(" ".join(str(v) for v in row) + "\n")


def pamap2_row(t, activity, marker):
    """54-column row; channel columns carry `marker + column_index`."""
    row = [0.0] * 54
    row[0] = t
    row[1] = activity
    row[2] = float("nan")  # heart rate column is habitually NaN
    for col in D._PAMAP2_CHANNEL_COLS:
        row[col] = marker + col
    return row


def test_pamap2_extracts_27_channels_in_documented_order(tmp_path):
    f = tmp_path / "subject101.dat"
    write_pamap2_fixture(f, [pamap2_row(0.0, 1, 1000.0), pamap2_row(0.01, 1, 2000.0)])
    streams = D.load_pamap2(tmp_path)
    assert len(streams) == 1
    s = streams[0]
    assert s.subject_id == 101
    assert s.channels.shape == (27, 2)
    np.testing.assert_array_equal(
        s.channels[:, 0], [1000.0 + c for c in D._PAMAP2_CHANNEL_COLS])
    np.testing.assert_array_equal(
        s.channels[:, 1], [2000.0 + c for c in D._PAMAP2_CHANNEL_COLS])
    assert s.labels.tolist() == [0, 0]  # raw activity 1 -> index 0


def test_pamap2_drops_transient_and_unlisted_activities(tmp_path):
    f = tmp_path / "subject102.dat"
    write_pamap2_fixture(f, [pamap2_row(0.0, 0, 1.0),
                             pamap2_row(0.01, 0, 2.0),
                             pamap2_row(0.02, 24, 3.0)])
    streams = D.load_pamap2(tmp_path, activities=(1, 2))
    assert streams[0].length == 0


def test_pamap2_nan_heart_rate_is_irrelevant(tmp_path):
    f = tmp_path / "subject103.dat"
    write_pamap2_fixture(f, [pamap2_row(0.0, 2, 5.0)])
    streams = D.load_pamap2(tmp_path)
    assert np.isfinite(streams[0].channels).all()


def test_pamap2_wrong_column_count(tmp_path):
    f = tmp_path / "subject104.dat"
    write_pamap2_fixture(f, [[0.0] * 50])
    with pytest.raises(DataError):
        D.load_pamap2(tmp_path)


# -- windowing ------------------------------------------------------------------------


def test_exact_fit_yields_one_window():
    stream = make_stream(1, np.zeros(4, dtype=int))
    ds = D.make_windows(stream, SMALL, stride=2)
    assert len(ds) == 1


def test_stride_arithmetic():
    profile = DatasetProfile("p", 2, 100, 2, sample_rate=1.0)
    stream = make_stream(1, np.zeros(150, dtype=int))
    ds = D.make_windows(stream, profile, stride=50)
    assert len(ds) == 2


def test_short_stream_yields_zero_windows():
    stream = make_stream(1, np.zeros(3, dtype=int))
    assert len(D.make_windows(stream, SMALL, stride=1)) == 0


def test_mixed_label_windows_dropped_matches_oracle():
    labels = np.array([0] * 6 + [1] * 6)
    stream = make_stream(1, labels)
    ds = D.make_windows(stream, SMALL, stride=1)
    assert len(ds) == window_count_oracle(labels.tolist(), 4, 1)
    assert all(w.label in (0, 1) for w in ds.windows)


def test_window_carries_subject_and_label():
    stream = make_stream(7, np.full(8, 2, dtype=int))
    ds = D.make_windows(stream, SMALL, stride=4)
    assert all(w.subject_id == 7 and w.label == 2 for w in ds.windows)


@settings(max_examples=60, deadline=None)
@given(
    labels=st.lists(st.integers(0, 2), min_size=0, max_size=40),
    stride=st.integers(1, 6),
)
def test_window_count_property(labels, stride):
    stream = make_stream(1, np.array(labels + [0], dtype=int))
    ds = D.make_windows(stream, SMALL, stride=stride)
    assert len(ds) == window_count_oracle(labels + [0], SMALL.window_len, stride)


# -- normalization -----------------------------------------------------------------------


def build_windows(rng, labels_subjects, profile=SMALL):
    ds = WindowedDataset(profile)
    for label, subject in labels_subjects:
        data = rng.standard_normal((profile.channels, profile.window_len)) + 3.0
        ds.windows.append(SensorWindow(data, label, subject))
    return ds


def test_fit_normalize_zero_mean_unit_std():
    rng = make_rng(1)
    ds = build_windows(rng, [(0, 1)] * 20)
    stats = D.fit_normalize(ds)
    normed = D.apply_normalize(ds, stats)
    data = normed.data_array()
    np.testing.assert_allclose(data.mean(axis=(0, 2)), 0.0, atol=1e-10)
    np.testing.assert_allclose(data.std(axis=(0, 2)), 1.0, atol=1e-10)


def test_apply_uses_train_stats_not_own():
    rng = make_rng(2)
    train = build_windows(rng, [(0, 1)] * 10)
    held = build_windows(rng, [(0, 2)] * 10)
    stats = D.fit_normalize(train)
    normed = D.apply_normalize(held, stats)
    expected = (held.windows[0].data - stats.mean[:, None]) / stats.std[:, None]
    np.testing.assert_array_equal(normed.windows[0].data, expected)
    # held-out data normalized by train stats is NOT zero-mean in general
    assert abs(normed.data_array().mean()) > 1e-6


def test_normalize_round_trip():
    rng = make_rng(3)
    ds = build_windows(rng, [(0, 1)] * 8)
    stats = D.fit_normalize(ds)
    back = D.denormalize(D.apply_normalize(ds, stats), stats)
    for orig, rt in zip(ds.windows, back.windows):
        np.testing.assert_allclose(rt.data, orig.data, atol=1e-10)


def test_constant_channel_rejected():
    ds = WindowedDataset(SMALL)
    data = np.zeros((2, 4))
    data[1] = np.arange(4.0)
    ds.windows.append(SensorWindow(data, 0, 1))
    with pytest.raises(DataError) as err:
        D.fit_normalize(ds)
    assert "a" in str(err.value)


def test_fit_normalize_empty_split():
    with pytest.raises(DataError):
        D.fit_normalize(WindowedDataset(SMALL))


# -- splits ------------------------------------------------------------------------------


def test_loso_validation_holds_exactly_one_subject():
    rng = make_rng(4)
    ds = build_windows(rng, [(0, 1), (1, 2), (0, 2), (1, 3), (0, 3), (1, 1)])
    train, val = D.loso_split(ds, 2)
    assert all(w.subject_id == 2 for w in val.windows)
    assert all(w.subject_id != 2 for w in train.windows)


def test_loso_is_exact_partition():
    rng = make_rng(5)
    pairs = [(rng.integers(0, 3), rng.integers(1, 4)) for _ in range(30)]
    ds = build_windows(rng, pairs)
    train, val = D.loso_split(ds, 1)
    assert len(train) + len(val) == len(ds)
    ids = {id(w) for w in ds.windows}
    assert {id(w) for w in train.windows} | {id(w) for w in val.windows} == ids


def test_loso_unknown_subject():
    rng = make_rng(6)
    ds = build_windows(rng, [(0, 1)])
    with pytest.raises(DataError):
        D.loso_split(ds, 99)


def test_loso_counts_match_bruteforce():
    rng = make_rng(7)
    pairs = [(int(rng.integers(0, 3)), int(rng.integers(1, 5))) for _ in range(50)]
    ds = build_windows(rng, pairs)
    for subject in (1, 2, 3, 4):
        train, val = D.loso_split(ds, subject)
        assert len(val) == sum(1 for _, s in pairs if s == subject)
        assert len(train) == sum(1 for _, s in pairs if s != subject)


def test_partition_by_class_single_bucket():
    rng = make_rng(8)
    ds = build_windows(rng, [(2, 1)] * 5)
    buckets = D.partition_by_class(ds)
    assert list(buckets) == [2]
    assert len(buckets[2]) == 5


def test_partition_by_class_matches_filter_oracle():
    rng = make_rng(9)
    pairs = [(int(rng.integers(0, 3)), 1) for _ in range(40)]
    ds = build_windows(rng, pairs)
    buckets = D.partition_by_class(ds)
    assert sum(len(b) for b in buckets.values()) == len(ds)
    for label, bucket in buckets.items():
        expected = [w for w in ds.windows if w.label == label]
        assert [id(w) for w in bucket.windows] == [id(w) for w in expected]


# -- persistence ---------------------------------------------------------------------------


def test_save_load_round_trip_bit_exact(tmp_path):
    rng = make_rng(10)
    ds = build_windows(rng, [(0, 1), (1, 2), (2, 1)])
    stats = D.NormStats(mean=np.array([0.5, -0.25]), std=np.array([2.0, 0.5]))
    D.save_windowed(ds, tmp_path / "out", stats)
    loaded, loaded_stats = D.load_windowed(tmp_path / "out")
    assert len(loaded) == 3
    for orig, back in zip(ds.windows, loaded.windows):
        assert np.array_equal(orig.data, back.data)
        assert (orig.label, orig.subject_id) == (back.label, back.subject_id)
    np.testing.assert_array_equal(loaded_stats.mean, stats.mean)
    np.testing.assert_array_equal(loaded_stats.std, stats.std)
    assert loaded.profile == ds.profile


def test_load_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        D.load_windowed(tmp_path)


def test_save_is_idempotent(tmp_path):
    rng = make_rng(11)
    ds = build_windows(rng, [(0, 1)])
    D.save_windowed(ds, tmp_path / "out")
    D.save_windowed(ds, tmp_path / "out")
    loaded, _ = D.load_windowed(tmp_path / "out")
    assert len(loaded) == 1


# -- toy corpus ------------------------------------------------------------------------------


def test_toy_corpus_shapes_and_classes():
    ds = toy_windows(seed=0)
    assert ds.profile == TOY_PROFILE
    labels = ds.labels_array()
    assert set(labels.tolist()) == {0, 1}
    assert sorted(ds.subjects()) == [1, 2, 3]
    assert ds.windows[0].data.shape == (6, 50)
    # both classes well represented
    assert (labels == 0).sum() >= 60 and (labels == 1).sum() >= 60


def test_toy_windows_phase_aligned():
    ds = toy_windows(seed=1, noise=0.0)
    zero = [w.data for w in ds.windows if w.label == 0 and w.subject_id == 1]
    # identical waveform in every window when noise-free
    for w in zero[1:]:
        np.testing.assert_allclose(w, zero[0], atol=1e-12)


def test_toy_csv_round_trip(tmp_path):
    p = tmp_path / "toy.csv"
    write_toy_csv(p, seed=2, subjects=2, windows_per_class=4)
    streams = D.load_canonical_csv(p, sample_rate=TOY_PROFILE.sample_rate)
    assert [s.subject_id for s in streams] == [1, 2]
    ds = D.merge([D.make_windows(s, TOY_PROFILE, 25) for s in streams])
    direct = toy_windows(seed=2, subjects=2, windows_per_class=4)
    assert len(ds) == len(direct)
    for a, b in zip(ds.windows, direct.windows):
        np.testing.assert_allclose(a.data, b.data, atol=0)
        assert (a.label, a.subject_id) == (b.label, b.subject_id)
