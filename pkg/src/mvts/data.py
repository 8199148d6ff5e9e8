"""CSV ingestion, chronological splits and sliding windows.

Each window pair is normalized with the mean and standard deviation of its
own input segment; the target segment is scaled with the *input's*
statistics, so the model never sees target-derived information.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .codec import NumericSeries

STD_FLOOR = 1e-8
DEFAULT_SPLIT = (0.7, 0.1, 0.2)
SPLIT_NAMES = ("train", "val", "test")
_TIME_NAMES = {"date", "time", "datetime", "timestamp", "ds", "index", "step"}


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable multichannel series plus per-channel scaling statistics."""

    series: NumericSeries
    mean: np.ndarray
    std: np.ndarray
    source: str = "<memory>"
    timestamps: Optional[tuple] = None

    @property
    def channels(self) -> int:
        return self.series.channels

    @property
    def rows(self) -> int:
        return self.series.steps

    @property
    def constant_channels(self) -> tuple:
        """Indices of channels whose scaling std is zero."""
        return tuple(int(i) for i in np.flatnonzero(self.std == 0))

    @classmethod
    def from_array(cls, values, channel_names=None, source="<memory>", timestamps=None) -> "Dataset":
        s = NumericSeries(values, channel_names)
        mean, std = _stats(s.values)
        return cls(s, mean, std, source, timestamps)

    def refit_scaler(self, rows: range) -> "Dataset":
        """Same data, scaling statistics computed only on ``rows`` (e.g. the training range)."""
        if len(rows) == 0:
            raise DataError("cannot fit scaler on an empty range")
        mean, std = _stats(self.series.values[:, rows.start:rows.stop])
        return Dataset(self.series, mean, std, self.source, self.timestamps)

    def zscored(self) -> np.ndarray:
        std = np.where(self.std == 0, 1.0, self.std)
        return (self.series.values - self.mean[:, None]) / std[:, None]


def _stats(values: np.ndarray):
    mean = values.mean(axis=1)
    std = values.std(axis=1)
    mean.setflags(write=False)
    std.setflags(write=False)
    return mean, std


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, timestamp_column: Optional[str] = "auto",
             value_columns: Optional[Sequence[str]] = None) -> Dataset:
    """Read a headed CSV into a :class:`Dataset`.

    Lines starting with ``#`` are skipped. The first column is treated as a
    timestamp when ``timestamp_column`` is ``"auto"`` and either its header is a common time name or its first
    cell does not parse as a number. Pass ``None`` to disable, or a column
    name to force it. Non-numeric value cells raise :class:`DataError`
    naming the 1-based data row and the column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]

    ts_idx = None
    if timestamp_column == "auto":
        first = rows[0][0].strip() if rows else ""
        if header and (header[0].lower() in _TIME_NAMES or (rows and not _is_float(first))):
            ts_idx = 0
    elif timestamp_column is not None:
        if timestamp_column not in header:
            raise DataError(f"{path}: timestamp column {timestamp_column!r} not in header")
        ts_idx = header.index(timestamp_column)

    if value_columns is None:
        cols = [i for i in range(len(header)) if i != ts_idx]
    else:
        missing = [c for c in value_columns if c not in header]
        if missing:
            raise DataError(f"{path}: columns not found: {missing}")
        cols = [header.index(c) for c in value_columns]
    if not cols:
        raise DataError(f"{path}: no value columns")

    values = np.empty((len(cols), len(rows)))
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        for ci, col in enumerate(cols):
            cell = row[col].strip()
            try:
                x = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r} at row {r}, column {header[col]!r}") from None
            if not math.isfinite(x):
                raise DataError(f"{path}: non-finite value at row {r}, column {header[col]!r}")
            values[ci, r - 1] = x
    timestamps = tuple(row[ts_idx] for row in rows) if ts_idx is not None else None
    return Dataset.from_array(values, [header[c] for c in cols], str(path), timestamps)


@dataclass(frozen=True)
class WindowSpec:
    lookback: int
    horizon: int
    stride: int = 1

    def __post_init__(self):
        for name in ("lookback", "horizon", "stride"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DataError(f"{name} must be a positive integer, got {v!r}")

    @property
    def length(self) -> int:
        return self.lookback + self.horizon


@dataclass(frozen=True, eq=False)
class WindowPair:
    x: np.ndarray
    y: np.ndarray
    norm_mean: np.ndarray
    norm_std: np.ndarray
    floored: np.ndarray
    start: int
    window_id: int
    channel: Optional[int] = None


def split_dataset(rows: int, ratios: Sequence[float] = DEFAULT_SPLIT,
                  min_length: int = 0) -> tuple[range, range, range]:
    """Chronological, contiguous train/val/test row ranges.

    Sizes are ``floor(rows * ratio)``; any remainder when ratios sum to less
    than 1 is left unused at the end.
    """
    if isinstance(rows, Dataset):
        rows = rows.rows
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError(f"need three positive ratios, got {tuple(ratios)}")
    if sum(ratios) > 1 + 1e-12:
        raise DataError(f"ratios sum to {sum(ratios):.6f} > 1")
    # round first so 0.7 * 100 == 70, not 69.99...
    sizes = [int(math.floor(round(rows * r, 9))) for r in ratios]
    out, start = [], 0
    for name, n in zip(SPLIT_NAMES, sizes):
        if n < min_length:
            raise DataError(f"{name} split has {n} rows, fewer than the window length {min_length}")
        out.append(range(start, start + n))
        start += n
    return tuple(out)


def normalize_window(x: np.ndarray, y: np.ndarray):
    """Scale ``x`` and ``y`` per channel by the mean/std of ``x``.

    Returns ``(xn, yn, mean, std, floored)``; ``floored`` marks channels
    where the std was below ``STD_FLOOR`` and was replaced by it.
    """
    mean = x.mean(axis=1)
    std = x.std(axis=1)
    floored = std < STD_FLOOR
    std = np.where(floored, STD_FLOOR, std)
    xn = (x - mean[:, None]) / std[:, None]
    yn = (y - mean[:, None]) / std[:, None]
    return xn, yn, mean, std, floored


def denormalize(values, pair: WindowPair) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return v * pair.norm_std[:, None] + pair.norm_mean[:, None]


def _split_range(d: Dataset, split, ratios) -> range:
    if isinstance(split, range):
        return split
    if split not in SPLIT_NAMES:
        raise DataError(f"unknown split {split!r}")
    return split_dataset(d.rows, ratios)[SPLIT_NAMES.index(split)]


def window_count(n_rows: int, spec: WindowSpec) -> int:
    if n_rows < spec.length:
        return 0
    return (n_rows - spec.length) // spec.stride + 1


def make_windows(d: Dataset, spec: WindowSpec, split="train", channel_independent: bool = False,
                 ratios: Sequence[float] = DEFAULT_SPLIT, zscore: bool = True) -> Iterator[WindowPair]:
    """Lazily yield normalized window pairs fully contained in ``split``.

    ``split`` is a split name or an explicit row range. With
    ``channel_independent`` every window position yields one single-channel
    pair per channel, in channel order.
    """
    rows = _split_range(d, split, ratios)
    if len(rows) == 0:
        raise DataError("empty split")
    if len(rows) < spec.length:
        raise DataError(f"split has {len(rows)} rows, window needs {spec.length}")
    data = d.zscored() if zscore else d.series.values
    wid = 0
    for start in range(rows.start, rows.stop - spec.length + 1, spec.stride):
        mid = start + spec.lookback
        x = data[:, start:mid]
        y = data[:, mid:mid + spec.horizon]
        xn, yn, mean, std, floored = normalize_window(x, y)
        if channel_independent:
            for ch in range(d.channels):
                yield WindowPair(xn[ch:ch + 1], yn[ch:ch + 1], mean[ch:ch + 1], std[ch:ch + 1],
                                 floored[ch:ch + 1], start, wid, ch)
        else:
            yield WindowPair(xn, yn, mean, std, floored, start, wid)
        wid += 1


@dataclass
class WindowBatch:
    """Stacked window pairs: ``x`` is ``(n, c, I)``, ``y`` is ``(n, c, O)``."""

    x: np.ndarray
    y: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    floored: np.ndarray
    start: np.ndarray
    window_id: np.ndarray
    channel: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self):
        return self.x.shape[0]

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std[:, :, None] + self.mean[:, :, None]


def stack_windows(pairs) -> WindowBatch:
    pairs = list(pairs)
    if not pairs:
        raise DataError("no windows to stack")
    return WindowBatch(
        x=np.stack([p.x for p in pairs]),
        y=np.stack([p.y for p in pairs]),
        mean=np.stack([p.norm_mean for p in pairs]),
        std=np.stack([p.norm_std for p in pairs]),
        floored=np.stack([p.floored for p in pairs]),
        start=np.array([p.start for p in pairs], dtype=np.int64),
        window_id=np.array([p.window_id for p in pairs], dtype=np.int64),
        channel=np.array([-1 if p.channel is None else p.channel for p in pairs], dtype=np.int64),
    )


def export_windows_csv(pairs, path) -> int:
    """Debug dump of ``(window_id, channel, role, step, value)`` rows; returns the row count."""
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_id", "channel", "role", "step", "value"])
        for p in pairs:
            for role, arr in (("x", p.x), ("y", p.y)):
                for ci in range(arr.shape[0]):
                    ch = p.channel if p.channel is not None else ci
                    for step, v in enumerate(arr[ci]):
                        w.writerow([p.window_id, ch, role, step, f"{v:.6f}"])
                        n += 1
    return n


def noisy_sine(t: int = 2000, c: int = 1, period: float = 48.0, noise: float = 0.1,
               seed: int = 0) -> Dataset:
    """Sine channels with Gaussian noise; channel ``i`` has period ``period * (1 + 0.25 i)``."""
    rng = np.random.default_rng(seed)
    k = np.arange(t)
    phases = rng.uniform(0, 2 * np.pi, size=c)
    periods = period * (1 + 0.25 * np.arange(c))
    values = np.sin(2 * np.pi * k[None, :] / periods[:, None] + phases[:, None])
    values = values + noise * rng.standard_normal((c, t))
    return Dataset.from_array(values, [f"sine{i}" for i in range(c)], "synthetic:noisy_sine")


def gaussian_noise(t: int = 20000, c: int = 1, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    return Dataset.from_array(rng.standard_normal((c, t)), [f"noise{i}" for i in range(c)],
                              "synthetic:gaussian")


SYNTHETIC = {"noisy_sine": noisy_sine, "gaussian": gaussian_noise}


def write_csv(d: Dataset, path) -> None:
    names = d.series.channel_names or tuple(f"ch{i}" for i in range(d.channels))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *names])
        for k in range(d.rows):
            w.writerow([k, *(repr(float(v)) for v in d.series.values[:, k])])
