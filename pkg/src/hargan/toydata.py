"""Synthetic two-class waveform corpus for desk-scale runs.

Class 0 is a noisy multi-channel sine, class 1 the matching square wave.
Channel frequencies are even multiples of the window rate and the stride is
half a window, so every window of a class is phase-aligned with every other:
the mean over windows is the clean waveform, which is what the per-channel
correlation report compares against.
"""

from __future__ import annotations

import numpy as np

from .datasets import (
    TOY_PROFILE,
    RecordStream,
    WindowedDataset,
    make_windows,
    merge,
)
from .tensor import make_rng

__all__ = ["TOY_PROFILE", "toy_streams", "toy_windows", "write_toy_csv",
           "class_waveform"]

# cycles per window; even so half-window strides stay phase-aligned
_CHANNEL_CYCLES = (2, 4, 6, 2, 4, 6)
_CHANNEL_PHASE = (0.0, 0.7, 1.4, 2.1, 2.8, 3.5)
_CHANNEL_AMP = (1.0, 0.9, 1.1, 1.2, 0.8, 1.0)


def class_waveform(label: int, length: int = TOY_PROFILE.window_len) -> np.ndarray:
    """Noise-free (C, length) template for one class."""
    t = np.arange(length)
    rows = []
    for cycles, phase, amp in zip(_CHANNEL_CYCLES, _CHANNEL_PHASE, _CHANNEL_AMP):
        wave = np.sin(2.0 * np.pi * cycles * t / length + phase)
        if label == 1:
            wave = np.sign(wave) + (wave == 0.0)  # square; break sign(0) ties upward
        rows.append(amp * wave)
    return np.stack(rows)


def toy_streams(seed: int, subjects: int = 3, windows_per_class: int = 24,
                noise: float = 0.1) -> list[RecordStream]:
    """One stream per subject: a class-0 segment followed by a class-1
    segment (the junction windows get dropped as mixed-label)."""
    rng = make_rng(seed)
    length = TOY_PROFILE.window_len
    stride = length // 2
    seg_len = stride * (windows_per_class - 1) + length
    streams = []
    for subject in range(1, subjects + 1):
        scale = 1.0 + 0.05 * (subject - 1)
        segments = []
        labels = []
        for label in (0, 1):
            template = class_waveform(label, length)
            reps = int(np.ceil(seg_len / length))
            wave = np.tile(template, reps)[:, :seg_len]
            seg = scale * wave + noise * rng.standard_normal((TOY_PROFILE.channels, seg_len))
            segments.append(seg)
            labels.append(np.full(seg_len, label, dtype=np.int64))
        streams.append(RecordStream(
            subject_id=subject,
            sample_rate=TOY_PROFILE.sample_rate,
            channels=np.concatenate(segments, axis=1),
            labels=np.concatenate(labels),
        ))
    return streams


def toy_windows(seed: int, subjects: int = 3, windows_per_class: int = 24,
                noise: float = 0.1) -> WindowedDataset:
    streams = toy_streams(seed, subjects, windows_per_class, noise)
    stride = TOY_PROFILE.window_len // 2
    return merge([make_windows(s, TOY_PROFILE, stride) for s in streams])


def write_toy_csv(path, seed: int, subjects: int = 3, windows_per_class: int = 24,
                  noise: float = 0.1) -> None:
    """Emit the corpus in the canonical CSV layout for the ingest command."""
    streams = toy_streams(seed, subjects, windows_per_class, noise)
    with open(path, "w") as fh:
        cols = ",".join(f"ch_{i}" for i in range(TOY_PROFILE.channels))
        fh.write(f"subject,activity,t,{cols}\n")
        for stream in streams:
            for t in range(stream.length):
                values = ",".join(repr(float(v)) for v in stream.channels[:, t])
                fh.write(f"{stream.subject_id},{stream.labels[t]},{t},{values}\n")
