"""Sensor-stream ingestion, windowing, normalization, and partitioning.

Raw recordings become per-subject :class:`RecordStream`s, which are cut into
fixed-shape (channels x length) :class:`SensorWindow`s matching a
:class:`DatasetProfile`. Windows with more than one label are dropped so each
class bucket stays clean. Normalization statistics always come from the
training split alone.

Windowed datasets persist as a directory of per-window binary files plus a
JSON manifest (shape, labels, subjects, optional normalization stats); the
manifest is written last, atomically, and marks the directory complete.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataError",
    "DatasetProfile",
    "RecordStream",
    "SensorWindow",
    "WindowedDataset",
    "NormStats",
    "PAMAP2_PROFILE",
    "RWHAR_PROFILE",
    "TOY_PROFILE",
    "PROFILES",
    "PAMAP2_DEFAULT_ACTIVITIES",
    "load_canonical_csv",
    "load_pamap2",
    "make_windows",
    "fit_normalize",
    "apply_normalize",
    "denormalize",
    "loso_split",
    "partition_by_class",
    "save_windowed",
    "load_windowed",
]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class DatasetProfile:
    """Fixed geometry of one dataset: window shape and label space."""

    name: str
    channels: int
    window_len: int
    num_classes: int
    channel_names: tuple[str, ...] = ()
    sample_rate: float = 1.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise DataError(f"profile {self.name}: needs >= 2 classes")
        if self.channel_names and len(set(self.channel_names)) != len(self.channel_names):
            raise DataError(f"profile {self.name}: duplicate channel names")
        if self.channel_names and len(self.channel_names) != self.channels:
            raise DataError(f"profile {self.name}: {len(self.channel_names)} names "
                            f"for {self.channels} channels")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "channels": self.channels,
            "window_len": self.window_len,
            "num_classes": self.num_classes,
            "channel_names": list(self.channel_names),
            "sample_rate": self.sample_rate,
        }

    @staticmethod
    def from_dict(d: dict) -> "DatasetProfile":
        return DatasetProfile(
            name=d["name"],
            channels=int(d["channels"]),
            window_len=int(d["window_len"]),
            num_classes=int(d["num_classes"]),
            channel_names=tuple(d.get("channel_names", ())),
            sample_rate=float(d.get("sample_rate", 1.0)),
        )


def _imu_names(site: str) -> tuple[str, ...]:
    return tuple(f"{site}_{sensor}_{axis}"
                 for sensor in ("acc", "gyro", "mag") for axis in "xyz")


PAMAP2_PROFILE = DatasetProfile(
    name="pamap2",
    channels=27,
    window_len=100,
    num_classes=7,
    channel_names=_imu_names("hand") + _imu_names("chest") + _imu_names("ankle"),
    sample_rate=100.0,
)

RWHAR_PROFILE = DatasetProfile(
    name="rwhar",
    channels=6,
    window_len=50,
    num_classes=8,
    channel_names=tuple(f"chest_{sensor}_{axis}"
                        for sensor in ("acc", "gyro") for axis in "xyz"),
    sample_rate=50.0,
)

# two-class waveform corpus used for desk-scale runs and the test suite
TOY_PROFILE = DatasetProfile(
    name="toy2",
    channels=6,
    window_len=50,
    num_classes=2,
    channel_names=tuple(f"ch_{i}" for i in range(6)),
    sample_rate=50.0,
)

PROFILES = {p.name: p for p in (PAMAP2_PROFILE, RWHAR_PROFILE, TOY_PROFILE)}

# Assumption: the seven protocol activities kept for PAMAP2 runs (raw ids).
# The choice is configuration, not a constant; override via load_pamap2(activities=...).
PAMAP2_DEFAULT_ACTIVITIES = (1, 2, 3, 4, 5, 6, 7)


@dataclass
class RecordStream:
    """One subject's continuous multi-channel recording with per-sample labels."""

    subject_id: int
    sample_rate: float
    channels: np.ndarray  # (C, T)
    labels: np.ndarray    # (T,) int

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.channels.ndim != 2:
            raise DataError(f"stream channels must be 2-d, got {self.channels.shape}")
        if self.labels.shape != (self.channels.shape[1],):
            raise DataError(f"stream labels length {self.labels.shape} does not match "
                            f"{self.channels.shape[1]} samples")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def length(self) -> int:
        return self.channels.shape[1]


@dataclass
class SensorWindow:
    """Fixed-shape window: (channels, length) data with one label and a subject."""

    data: np.ndarray
    label: int
    subject_id: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DataError(f"window data must be 2-d, got {self.data.shape}")


@dataclass
class WindowedDataset:
    profile: DatasetProfile
    windows: list[SensorWindow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.windows)

    def data_array(self) -> np.ndarray:
        """(n, C, L) stack of all window data."""
        if not self.windows:
            return np.zeros((0, self.profile.channels, self.profile.window_len))
        return np.stack([w.data for w in self.windows])

    def labels_array(self) -> np.ndarray:
        return np.array([w.label for w in self.windows], dtype=np.int64)

    def subjects(self) -> list[int]:
        seen: dict[int, None] = {}
        for w in self.windows:
            seen.setdefault(w.subject_id, None)
        return list(seen)


@dataclass
class NormStats:
    """Per-channel z-score statistics, fit on the training split only."""

    mean: np.ndarray  # (C,)
    std: np.ndarray   # (C,)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(np.asarray(d["mean"], dtype=np.float64),
                         np.asarray(d["std"], dtype=np.float64))


# -- cleaning ----------------------------------------------------------------


def _interpolate_channel(values: np.ndarray, name: str) -> np.ndarray:
    """Linear interpolation over non-finite samples; edges take the nearest
    valid value. A channel with no valid sample is unrecoverable."""
    finite = np.isfinite(values)
    if finite.all():
        return values
    if not finite.any():
        raise DataError(f"channel {name}: no valid samples to interpolate from")
    idx = np.arange(values.size)
    return np.interp(idx, idx[finite], values[finite])


# -- loaders -------------------------------------------------------------------


def load_canonical_csv(path: str | os.PathLike, sample_rate: float = 1.0) -> list[RecordStream]:
    """Read the canonical CSV (`subject,activity,t,ch_0..ch_{C-1}`) into one
    stream per subject. Labels must already be class indices. Non-finite cells
    are interpolated per channel."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:3] != ["subject", "activity", "t"]:
            raise DataError(f"{path}: malformed header {header[:3]}, "
                            "expected subject,activity,t,ch_0..")
        n_ch = len(header) - 3
        expected = [f"ch_{i}" for i in range(n_ch)]
        if header[3:] != expected:
            raise DataError(f"{path}: channel columns {header[3:]} do not match {expected}")
        rows = list(reader)

    by_subject: dict[int, list[list[str]]] = {}
    for row in rows:
        if len(row) != len(header):
            raise DataError(f"{path}: row with {len(row)} cells, expected {len(header)}")
        by_subject.setdefault(int(row[0]), []).append(row)

    streams = []
    for subject in sorted(by_subject):
        srows = by_subject[subject]
        t = np.array([float(r[2]) for r in srows])
        if np.any(np.diff(t) < 0):
            raise DataError(f"{path}: subject {subject} time column is not monotone")
        labels = np.array([int(r[1]) for r in srows], dtype=np.int64)
        raw = np.array([[_parse_cell(c) for c in r[3:]] for r in srows]).T  # (C, T)
        channels = np.stack([_interpolate_channel(raw[c], f"ch_{c}") for c in range(n_ch)])
        streams.append(RecordStream(subject, sample_rate, channels, labels))
    return streams


def _parse_cell(cell: str) -> float:
    cell = cell.strip()
    if cell == "" or cell.lower() in ("nan", "na"):
        return math.nan
    return float(cell)


# PAMAP2 raw layout: 54 space-separated columns per row.
# col 0 timestamp, col 1 activity id, col 2 heart rate, then three 17-column
# IMU blocks (hand at 3, chest at 20, ankle at 37). Within a block:
# temperature, 3D acceleration (16g), 3D acceleration (6g), 3D gyroscope,
# 3D magnetometer, 4 orientation columns (invalid in this collection).
# The 27 kept channels are the 16g acceleration, gyroscope and magnetometer
# triples of each IMU, in block order.
_PAMAP2_COLUMNS = 54
_PAMAP2_IMU_BASES = (3, 20, 37)
_PAMAP2_CHANNEL_COLS = tuple(
    base + off for base in _PAMAP2_IMU_BASES for off in (1, 2, 3, 7, 8, 9, 10, 11, 12)
)


def load_pamap2(directory: str | os.PathLike,
                activities: tuple[int, ...] = PAMAP2_DEFAULT_ACTIVITIES) -> list[RecordStream]:
    """Read raw PAMAP2 per-subject .dat files. Keeps the 27 IMU channels,
    drops transient samples (activity id 0), keeps only `activities` and
    relabels them to their index in that tuple."""
    directory = os.fspath(directory)
    if not os.path.isdir(directory):
        raise DataError(f"{directory}: not a directory")
    files = sorted(f for f in os.listdir(directory) if f.endswith(".dat"))
    if not files:
        raise DataError(f"{directory}: no .dat subject files found")

    label_of = {raw: i for i, raw in enumerate(activities)}
    streams = []
    for fname in files:
        raw = np.genfromtxt(os.path.join(directory, fname))
        raw = np.atleast_2d(raw)
        if raw.size == 0:
            raw = np.zeros((0, _PAMAP2_COLUMNS))
        if raw.shape[1] != _PAMAP2_COLUMNS:
            raise DataError(f"{fname}: {raw.shape[1]} columns, expected {_PAMAP2_COLUMNS}")
        digits = "".join(ch for ch in fname if ch.isdigit())
        subject = int(digits) if digits else len(streams) + 1

        raw_labels = raw[:, 1].astype(np.int64)
        keep = np.isin(raw_labels, list(activities))
        kept = raw[keep]
        labels = np.array([label_of[a] for a in raw_labels[keep]], dtype=np.int64)
        channels = kept[:, list(_PAMAP2_CHANNEL_COLS)].T
        if channels.shape[1] > 0:
            channels = np.stack([
                _interpolate_channel(channels[c], PAMAP2_PROFILE.channel_names[c])
                for c in range(channels.shape[0])
            ])
        streams.append(RecordStream(subject, PAMAP2_PROFILE.sample_rate, channels, labels))
    return streams


# -- windowing & splits ---------------------------------------------------------


def make_windows(stream: RecordStream, profile: DatasetProfile,
                 stride: int | None = None) -> WindowedDataset:
    """Sliding windows of the profile length. Windows spanning a label change
    are dropped. A stream shorter than one window yields zero windows.
    Default stride is half a window (50% overlap)."""
    length = profile.window_len
    stride = length // 2 if stride is None else stride
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    if stream.channels.shape[0] != profile.channels:
        raise DataError(f"stream has {stream.channels.shape[0]} channels, "
                        f"profile {profile.name} expects {profile.channels}")
    out = WindowedDataset(profile)
    for start in range(0, stream.length - length + 1, stride):
        labels = stream.labels[start:start + length]
        if labels.max() != labels.min():
            continue
        out.windows.append(SensorWindow(
            data=stream.channels[:, start:start + length].copy(),
            label=int(labels[0]),
            subject_id=stream.subject_id,
        ))
    return out


def merge(datasets: list[WindowedDataset]) -> WindowedDataset:
    if not datasets:
        raise DataError("merge needs at least one dataset")
    out = WindowedDataset(datasets[0].profile)
    for ds in datasets:
        if ds.profile != out.profile:
            raise DataError(f"profiles differ: {ds.profile.name} vs {out.profile.name}")
        out.windows.extend(ds.windows)
    return out


def fit_normalize(train: WindowedDataset) -> NormStats:
    if not train.windows:
        raise DataError("cannot fit normalization on an empty split")
    data = train.data_array()           # (n, C, L)
    mean = data.mean(axis=(0, 2))
    std = data.std(axis=(0, 2))
    flat = np.where(std <= 0.0)[0]
    if flat.size:
        names = [train.profile.channel_names[c] if train.profile.channel_names
                 else str(c) for c in flat]
        raise DataError(f"zero-variance channel(s) {names}: cannot z-score")
    return NormStats(mean, std)


def apply_normalize(ds: WindowedDataset, stats: NormStats) -> WindowedDataset:
    mu = stats.mean[:, None]
    sd = stats.std[:, None]
    return WindowedDataset(ds.profile, [
        SensorWindow((w.data - mu) / sd, w.label, w.subject_id) for w in ds.windows
    ])


def denormalize(ds: WindowedDataset, stats: NormStats) -> WindowedDataset:
    mu = stats.mean[:, None]
    sd = stats.std[:, None]
    return WindowedDataset(ds.profile, [
        SensorWindow(w.data * sd + mu, w.label, w.subject_id) for w in ds.windows
    ])


def loso_split(ds: WindowedDataset, held_out_subject: int) -> tuple[WindowedDataset, WindowedDataset]:
    """Exact partition: validation gets the held-out subject, train the rest."""
    if held_out_subject not in set(w.subject_id for w in ds.windows):
        raise DataError(f"subject {held_out_subject} not present in dataset")
    train = WindowedDataset(ds.profile)
    val = WindowedDataset(ds.profile)
    for w in ds.windows:
        (val if w.subject_id == held_out_subject else train).windows.append(w)
    return train, val


def partition_by_class(ds: WindowedDataset) -> dict[int, WindowedDataset]:
    buckets: dict[int, WindowedDataset] = {}
    for w in ds.windows:
        buckets.setdefault(w.label, WindowedDataset(ds.profile)).windows.append(w)
    return buckets


# -- persistence -----------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
_FORMAT_VERSION = 1


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    _atomic_write_bytes(os.fspath(path), text.encode("utf-8"))


def save_windowed(ds: WindowedDataset, directory: str | os.PathLike,
                  stats: NormStats | None = None) -> str:
    """Write one little-endian float64 file per window plus the manifest.
    The manifest lands last (atomic rename), so its presence marks a
    complete directory. Returns the manifest path."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, w in enumerate(ds.windows):
        fname = f"w{i:06d}.bin"
        _atomic_write_bytes(os.path.join(directory, fname),
                            w.data.astype("<f8").tobytes())
        entries.append({"file": fname, "label": int(w.label),
                        "subject": int(w.subject_id)})
    manifest = {
        "version": _FORMAT_VERSION,
        "profile": ds.profile.to_dict(),
        "count": len(entries),
        "windows": entries,
        "norm_stats": stats.to_dict() if stats is not None else None,
    }
    path = os.path.join(directory, MANIFEST_NAME)
    atomic_write_text(path, json.dumps(manifest, indent=1))
    return path


def load_windowed(directory: str | os.PathLike) -> tuple[WindowedDataset, NormStats | None]:
    directory = os.fspath(directory)
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"{directory}: no {MANIFEST_NAME} (incomplete or missing dataset)")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != _FORMAT_VERSION:
        raise DataError(f"{directory}: manifest version {manifest.get('version')}, "
                        f"expected {_FORMAT_VERSION}")
    profile = DatasetProfile.from_dict(manifest["profile"])
    shape = (profile.channels, profile.window_len)
    ds = WindowedDataset(profile)
    for entry in manifest["windows"]:
        raw = np.fromfile(os.path.join(directory, entry["file"]), dtype="<f8")
        if raw.size != shape[0] * shape[1]:
            raise DataError(f"{entry['file']}: {raw.size} values, expected {shape}")
        ds.windows.append(SensorWindow(raw.reshape(shape).astype(np.float64),
                                       int(entry["label"]), int(entry["subject"])))
    stats = manifest.get("norm_stats")
    return ds, (NormStats.from_dict(stats) if stats else None)
