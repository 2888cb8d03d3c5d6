"""Synthetic PPG generation and the ``PPGD`` binary dataset format.

Each beat is rendered as two Gaussian lobes (systolic peak and a smaller
dicrotic bump). Heart-rate datasets label each record with its realized mean
heart rate; AF-style datasets separate the two classes purely by beat-interval
irregularity.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"PPGD"
VERSION = 1
TASK_REGRESSION = 0
TASK_CLASSIFICATION = 1
TASK_NAMES = {TASK_REGRESSION: "regression", TASK_CLASSIFICATION: "classification"}

HR_MIN, HR_MAX = 30.0, 220.0

# (position as fraction of the beat interval, width as fraction, amplitude)
SYSTOLIC_LOBE = (0.30, 0.06, 1.0)
DICROTIC_LOBE = (0.65, 0.08, 0.35)
WANDER_FREQ_HZ = 0.2

AF_JITTER = 0.30
SINUS_JITTER = 0.03

_HEADER = struct.Struct("<4sIIIII")


class DatasetFormatError(ValueError):
    """Base class for problems reading or writing a ``PPGD`` file."""


class BadMagicError(DatasetFormatError):
    pass


class BadVersionError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class LabelTaskMismatchError(DatasetFormatError):
    pass


@dataclass
class PpgRecord:
    samples: np.ndarray
    label: float | int
    sample_rate: int
    # None for records loaded from disk; the file format does not carry seeds.
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class PpgDataset:
    task: int
    sample_rate: int
    records: list[PpgRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise ValueError(f"unknown task type {self.task}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def task_name(self) -> str:
        return TASK_NAMES[self.task]

    @property
    def signal_length(self) -> int:
        return len(self.records[0].samples) if self.records else 0

    def signals(self) -> np.ndarray:
        return np.stack([r.samples for r in self.records]).astype(np.float32)

    def labels(self) -> np.ndarray:
        if self.task == TASK_REGRESSION:
            return np.array([r.label for r in self.records], dtype=np.float32)
        return np.array([r.label for r in self.records], dtype=np.int64)

    def split(self, val_fraction: float = 0.2) -> tuple["PpgDataset", "PpgDataset"]:
        """Fixed split: the last ``val_fraction`` of records is validation."""
        n_val = max(1, int(round(len(self) * val_fraction)))
        if n_val >= len(self):
            raise ValueError("dataset too small to split")
        cut = len(self) - n_val
        return (
            PpgDataset(self.task, self.sample_rate, self.records[:cut]),
            PpgDataset(self.task, self.sample_rate, self.records[cut:]),
        )


def _signal_length(duration_s: float, sample_rate: int) -> int:
    total = duration_s * sample_rate
    n = int(round(total))
    if n < 1 or not math.isclose(total, n, rel_tol=0.0, abs_tol=1e-9):
        raise ValueError(
            f"duration_s * sample_rate must be a positive integer, got {total}"
        )
    return n


def _add_lobe(out: np.ndarray, t: np.ndarray, center: float, width: float, amp: float):
    # Lobes are negligible beyond 10 widths; restrict the update to that window.
    lo = np.searchsorted(t, center - 10 * width)
    hi = np.searchsorted(t, center + 10 * width)
    if hi > lo:
        seg = t[lo:hi]
        out[lo:hi] += amp * np.exp(-0.5 * ((seg - center) / width) ** 2)


def generate_ppg(
    hr_bpm: float,
    duration_s: float,
    sample_rate: int,
    rr_jitter: float = 0.0,
    noise_std: float = 0.0,
    wander_amp: float = 0.0,
    seed: int = 0,
) -> PpgRecord:
    """Render one z-scored synthetic PPG record.

    Beat intervals are ``60 / hr_bpm`` seconds scaled by ``1 + U(-rr_jitter,
    rr_jitter)``. One extra beat is rendered on each side of the window so the
    lobes near the edges see their neighbours' tails, which keeps zero-jitter
    signals exactly periodic. The label is 60 divided by the mean interval of
    the beats whose onset falls inside the window.
    """
    if not (HR_MIN <= hr_bpm <= HR_MAX):
        raise ValueError(f"hr_bpm must lie in [{HR_MIN}, {HR_MAX}], got {hr_bpm}")
    if rr_jitter < 0 or noise_std < 0 or wander_amp < 0:
        raise ValueError("rr_jitter, noise_std and wander_amp must be non-negative")
    if rr_jitter >= 1:
        raise ValueError("rr_jitter must be below 1 to keep intervals positive")
    n = _signal_length(duration_s, sample_rate)
    rng = np.random.default_rng(seed)
    base = 60.0 / hr_bpm

    # Upper bound on beats needed to cover the window plus one trailing beat.
    max_beats = int(math.ceil(duration_s / (base * (1 - rr_jitter)))) + 2
    intervals = base * (1.0 + rng.uniform(-rr_jitter, rr_jitter, size=max_beats + 1))
    # onsets[0] is the leading pad beat, onsets[1] == 0.
    onsets = np.concatenate(([-intervals[0], 0.0], np.cumsum(intervals[1:-1])))

    inside = (onsets >= 0) & (onsets < duration_s)
    # One pad beat past the end is enough: lobes sit within 1.3 intervals of onset.
    last = int(np.nonzero(inside)[0][-1]) + 1
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for k in range(last + 1):
        for pos, width, amp in (SYSTOLIC_LOBE, DICROTIC_LOBE):
            _add_lobe(x, t, onsets[k] + pos * intervals[k], width * intervals[k], amp)

    if wander_amp > 0:
        phase = rng.uniform(0.0, 2 * math.pi)
        x += wander_amp * np.sin(2 * math.pi * WANDER_FREQ_HZ * t + phase)
    if noise_std > 0:
        x += rng.normal(0.0, noise_std, size=n)

    std = x.std()
    x = (x - x.mean()) / std if std > 0 else x - x.mean()
    label = 60.0 / float(np.mean(intervals[inside]))
    return PpgRecord(samples=x, label=label, sample_rate=sample_rate, seed=seed)


def _child_seeds(seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def generate_hr_dataset(
    n: int,
    hr_range: Sequence[float] = (50.0, 150.0),
    duration_s: float = 8.0,
    sample_rate: int = 50,
    rr_jitter: float = 0.05,
    noise_std: float = 0.1,
    wander_amp: float = 0.2,
    seed: int = 0,
) -> PpgDataset:
    lo, hi = float(hr_range[0]), float(hr_range[1])
    if n < 1:
        raise ValueError("n must be >= 1")
    if lo > hi or lo < HR_MIN or hi > HR_MAX:
        raise ValueError(f"invalid heart-rate range [{lo}, {hi}]")
    seeds = _child_seeds(seed, n)
    records = []
    for s in seeds:
        hr = float(np.random.default_rng([s, 1]).uniform(lo, hi)) if hi > lo else lo
        records.append(
            generate_ppg(hr, duration_s, sample_rate, rr_jitter, noise_std, wander_amp, s)
        )
    return PpgDataset(TASK_REGRESSION, sample_rate, records)


def generate_af_dataset(
    n: int,
    af_fraction: float = 0.3,
    duration_s: float = 8.0,
    sample_rate: int = 50,
    hr_range: Sequence[float] = (60.0, 110.0),
    noise_std: float = 0.1,
    wander_amp: float = 0.2,
    seed: int = 0,
) -> PpgDataset:
    if n < 2:
        raise ValueError("n must be >= 2")
    if not (0.0 < af_fraction < 1.0):
        raise ValueError(f"af_fraction must lie in (0, 1), got {af_fraction}")
    lo, hi = float(hr_range[0]), float(hr_range[1])
    if lo > hi or lo < HR_MIN or hi > HR_MAX:
        raise ValueError(f"invalid heart-rate range [{lo}, {hi}]")
    n_pos = int(round(n * af_fraction))
    classes = np.array([1] * n_pos + [0] * (n - n_pos))
    np.random.default_rng(seed).shuffle(classes)
    seeds = _child_seeds(seed, n)
    records = []
    for cls, s in zip(classes, seeds):
        hr = float(np.random.default_rng([s, 1]).uniform(lo, hi))
        jitter = AF_JITTER if cls == 1 else SINUS_JITTER
        rec = generate_ppg(hr, duration_s, sample_rate, jitter, noise_std, wander_amp, s)
        rec.label = int(cls)
        records.append(rec)
    return PpgDataset(TASK_CLASSIFICATION, sample_rate, records)


def _check_label(task: int, label) -> None:
    if task == TASK_CLASSIFICATION:
        if isinstance(label, (float, np.floating)) and not float(label).is_integer():
            raise LabelTaskMismatchError(f"classification label {label} is not an integer")
        if int(label) not in (0, 1):
            raise LabelTaskMismatchError(f"classification label {label} not in {{0, 1}}")
    elif not (np.isfinite(label) and label > 0):
        raise LabelTaskMismatchError(f"regression label {label} must be finite and > 0")


def write_dataset(dataset: PpgDataset, path) -> None:
    if len(dataset) < 1:
        raise DatasetFormatError("dataset has no records")
    length = dataset.signal_length
    if length < 1:
        raise DatasetFormatError("signal length must be >= 1")
    label_fmt = "<f4" if dataset.task == TASK_REGRESSION else "<u4"
    chunks = [
        _HEADER.pack(MAGIC, VERSION, dataset.task, len(dataset), length, dataset.sample_rate)
    ]
    for rec in dataset.records:
        if len(rec.samples) != length:
            raise DatasetFormatError("all records must share one signal length")
        _check_label(dataset.task, rec.label)
        chunks.append(np.asarray(rec.samples, dtype="<f4").tobytes())
        chunks.append(np.array([rec.label], dtype=label_fmt).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_dataset(path) -> PpgDataset:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"file shorter than the {_HEADER.size}-byte header")
    magic, version, task, count, length, rate = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}")
    if task not in TASK_NAMES:
        raise LabelTaskMismatchError(f"unknown task type {task}")
    if count < 1 or length < 1:
        raise DatasetFormatError("record_count and signal_length must be >= 1")
    stride = 4 * (length + 1)
    expected = _HEADER.size + count * stride
    if len(data) < expected:
        raise TruncatedFileError(
            f"header declares {count} records ({expected} bytes) but file has {len(data)}"
        )
    if len(data) > expected:
        raise DatasetFormatError(f"{len(data) - expected} trailing bytes after payload")

    body = np.frombuffer(data, dtype="<u4", offset=_HEADER.size).reshape(count, length + 1)
    samples = body[:, :length].view("<f4").astype(np.float32)
    if task == TASK_REGRESSION:
        labels = body[:, length].view("<f4").astype(np.float64)
    else:
        labels = body[:, length].astype(np.int64)
    records = []
    for i in range(count):
        label = float(labels[i]) if task == TASK_REGRESSION else int(labels[i])
        _check_label(task, label)
        records.append(PpgRecord(samples=samples[i], label=label, sample_rate=int(rate)))
    return PpgDataset(int(task), int(rate), records)
