"""Benchmark CSV loading, chronological splits, standardization and windowing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Channel count, sampling frequency and length of the standard benchmarks.
BENCHMARKS = {
    "ETTh1": (7, "1 hour", 17420),
    "ETTh2": (7, "1 hour", 17420),
    "ETTm1": (7, "15 mins", 69680),
    "ETTm2": (7, "15 mins", 69680),
    "weather": (21, "10 mins", 52696),
    "solar": (137, "10 mins", 52179),
    "electricity": (321, "1 hour", 26304),
    "traffic": (862, "1 hour", 17544),
}

# ETT borders: 12/4/4 months of 30 days.
_ETT_HOURLY = (12 * 30 * 24, 4 * 30 * 24, 4 * 30 * 24)
_ETT_MINUTELY = tuple(4 * n for n in _ETT_HOURLY)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SeriesMatrix:
    """Channel-major ``C x T`` multivariate series."""

    values: np.ndarray
    channel_names: tuple[str, ...]
    frequency: str = "unknown"
    source_path: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"series must be a non-empty C x T matrix, got shape {values.shape}")
        if len(self.channel_names) != values.shape[0]:
            raise DataError(
                f"{len(self.channel_names)} channel names for {values.shape[0]} channels"
            )
        if not np.all(np.isfinite(values)):
            raise DataError("series contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def segment(self, start: int, stop: int) -> SeriesMatrix:
        return replace(self, values=self.values[:, start:stop])


def _benchmark_frequency(path: Path) -> str:
    stem = path.stem.lower()
    for name, (_, freq, _) in BENCHMARKS.items():
        if stem == name.lower():
            return freq
    return "unknown"


def load_csv(path) -> SeriesMatrix:
    """Read a benchmark CSV; a leading ``date`` column is dropped.

    Rows are time steps and the remaining columns are channels, in file order.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: empty file")
        skip = 1 if header[0].strip().lower() == "date" else 0
        names = [h.strip() for h in header[skip:]]
        if not names:
            raise DataError(f"{path}: no data columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                rows.append([float(v) for v in row[skip:]])
            except ValueError:
                for col, v in enumerate(row[skip:], start=skip):
                    try:
                        float(v)
                    except ValueError:
                        raise DataError(
                            f"{path}: non-numeric value {v!r} at row {lineno}, column {header[col]!r}"
                        ) from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64).T
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"{path}: non-finite value at row {bad[1] + 2}, column {names[bad[0]]!r}")
    return SeriesMatrix(values, tuple(names), _benchmark_frequency(path), str(path))


def write_csv(series: SeriesMatrix, path, start="2016-07-01 00:00:00", step_minutes: int = 60) -> None:
    """Write ``series`` in the benchmark layout, with a synthetic ``date`` column."""
    t0 = np.datetime64(start)
    stamps = t0 + np.arange(series.length) * np.timedelta64(step_minutes, "m")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *series.channel_names])
        for t in range(series.length):
            w.writerow([str(stamps[t]).replace("T", " "), *(repr(float(v)) for v in series.values[:, t])])


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "ratio"
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self):
        if self.mode not in ("ratio", "ett-hourly", "ett-minutely"):
            raise DataError(f"unknown split mode {self.mode!r}")
        if self.mode == "ratio":
            r = tuple(float(x) for x in self.ratios)
            if len(r) != 3 or any(x <= 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
                raise DataError(f"split ratios must be three positive numbers summing to 1, got {self.ratios}")
            object.__setattr__(self, "ratios", r)

    def lengths(self, total: int) -> tuple[int, int, int]:
        if self.mode == "ett-hourly":
            n = _ETT_HOURLY
        elif self.mode == "ett-minutely":
            n = _ETT_MINUTELY
        else:
            n_train = int(math.floor(total * self.ratios[0] + 1e-9))
            n_test = int(math.floor(total * self.ratios[2] + 1e-9))
            n = (n_train, total - n_train - n_test, n_test)
        if sum(n) > total:
            raise DataError(f"{self.mode} split needs {sum(n)} steps, series has {total}")
        return n


def split(series: SeriesMatrix, spec: SplitSpec, lookback: int = 1, horizon: int = 1):
    """Contiguous chronological train/val/test segments.

    Each segment must hold at least one ``lookback + horizon`` window.
    """
    lengths = spec.lengths(series.length)
    out = []
    start = 0
    for name, n in zip(("train", "val", "test"), lengths):
        if n < lookback + horizon:
            raise DataError(
                f"{name} split has {n} steps, fewer than lookback + horizon = {lookback + horizon}"
            )
        out.append(series.segment(start, start + n))
        start += n
    return tuple(out)


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, series: SeriesMatrix) -> SeriesMatrix:
        return replace(series, values=(series.values - self.mean[:, None]) / self.std[:, None])

    def inverse_transform(self, series: SeriesMatrix) -> SeriesMatrix:
        return replace(series, values=series.values * self.std[:, None] + self.mean[:, None])


def fit_scaler(train: SeriesMatrix, floor: float = 1e-8) -> Scaler:
    """Per-channel mean and population std of the training segment."""
    mean = train.values.mean(axis=1)
    std = np.maximum(train.values.std(axis=1), floor)
    return Scaler(mean, std)


@dataclass
class WindowBatch:
    inputs: np.ndarray  # B x C x L
    targets: np.ndarray  # B x C x H
    window_starts: np.ndarray


@dataclass
class WindowSet:
    """All sliding windows of one split, as read-only strided views."""

    inputs: np.ndarray  # N x C x L
    targets: np.ndarray  # N x C x H
    starts: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.starts)

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for i in range(len(self)):
            yield self.inputs[i], self.targets[i]

    def batch(self, index) -> WindowBatch:
        index = np.asarray(index)
        return WindowBatch(
            np.ascontiguousarray(self.inputs[index]),
            np.ascontiguousarray(self.targets[index]),
            self.starts[index],
        )

    def batches(self, batch_size: int, order=None) -> Iterator[WindowBatch]:
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for lo in range(0, len(order), batch_size):
            yield self.batch(order[lo : lo + batch_size])


def make_windows(series: SeriesMatrix, lookback: int, horizon: int, stride: int = 1) -> WindowSet:
    """Window ``i`` reads ``[i*stride, i*stride + L)`` and predicts the next ``H`` steps."""
    if lookback < 1 or horizon < 1 or stride < 1:
        raise DataError("lookback, horizon and stride must be >= 1")
    values = series.values
    c, t = values.shape
    if t < lookback + horizon:
        return WindowSet(np.empty((0, c, lookback)), np.empty((0, c, horizon)), np.empty(0, dtype=int))
    starts = np.arange(0, t - lookback - horizon + 1, stride)
    full = sliding_window_view(values, lookback + horizon, axis=1)[:, ::stride, :]
    full = np.moveaxis(full, 1, 0)
    return WindowSet(full[:, :, :lookback], full[:, :, lookback:], starts)
