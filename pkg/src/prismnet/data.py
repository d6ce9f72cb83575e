"""Load series: synthesis, CSV ingestion, windowing, normalization, patching, splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import ContractError

DEFAULT_WINDOW = 480
DEFAULT_HORIZONS = (24, 96, 192, 336)


class ConfigError(ValueError):
    pass


class IngestionError(ValueError):
    pass


@dataclass
class LoadSeries:
    values: np.ndarray  # (time, channels)
    resolution: str = "1 hour"
    channel_names: list[str] = field(default_factory=list)
    timestamps: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if not self.channel_names:
            self.channel_names = [f"ch{i}" for i in range(self.values.shape[1])]
        if len(self.channel_names) != self.values.shape[1]:
            raise ContractError("channel_names does not match the number of columns")
        if not np.all(np.isfinite(self.values)):
            raise IngestionError("load series contains missing or non-finite values")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool per channel


@dataclass
class LoadWindow:
    history: np.ndarray  # (l, d)
    target: np.ndarray  # (h, d)
    window_start_index: int
    norm_stats: NormStats | None = None

    @property
    def length(self) -> int:
        return self.history.shape[0]

    @property
    def horizon(self) -> int:
        return self.target.shape[0]


@dataclass
class PatchSet:
    patches: np.ndarray  # (num_patches, patch_len, d)
    patch_len: int
    stride: int
    pad: int

    @property
    def num_patches(self) -> int:
        return self.patches.shape[0]


# --------------------------------------------------------------------------
# synthesis and I/O


@dataclass
class SyntheticConfig:
    n_steps: int = 8000
    n_channels: int = 4
    daily_period: float = 24.0
    weekly_period: float = 168.0
    trend_slope: float = 1e-4
    noise_std: float = 0.1
    seed: int = 0
    daily_amplitude: float = 1.0
    weekly_amplitude: float = 0.5
    min_steps: int = 2 * (DEFAULT_WINDOW + max(DEFAULT_HORIZONS))


def generate_synthetic(config: SyntheticConfig) -> LoadSeries:
    """Daily + weekly sinusoids, a linear trend and Gaussian noise.

    Channels share periods but get their own amplitude scale, phase and base
    level, all drawn from ``config.seed``.
    """
    c = config
    if c.daily_period <= 0 or c.weekly_period <= 0:
        raise ConfigError("periods must be positive")
    if c.n_steps < c.min_steps:
        raise ConfigError(f"n_steps={c.n_steps} is below the minimum {c.min_steps}")
    if c.n_channels < 1:
        raise ConfigError("n_channels must be >= 1")
    rng = np.random.default_rng(c.seed)
    t = np.arange(c.n_steps, dtype=np.float64)[:, None]
    scale = rng.uniform(0.7, 1.3, size=c.n_channels)
    phase_d = rng.uniform(0, 2 * np.pi, size=c.n_channels)
    phase_w = rng.uniform(0, 2 * np.pi, size=c.n_channels)
    level = rng.uniform(2.0, 4.0, size=c.n_channels)
    values = (level
              + scale * c.daily_amplitude * np.sin(2 * np.pi * t / c.daily_period + phase_d)
              + scale * c.weekly_amplitude * np.sin(2 * np.pi * t / c.weekly_period + phase_w)
              + c.trend_slope * t)
    if c.noise_std > 0:
        values = values + rng.normal(0.0, c.noise_std, size=values.shape)
    return LoadSeries(values, resolution="1 hour",
                      channel_names=[f"load_{i}" for i in range(c.n_channels)],
                      timestamps=[str(i) for i in range(c.n_steps)])


def _parse_time(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    return datetime.fromisoformat(raw)


def ingest_csv(path, time_column: str | None = None, value_columns: Sequence[str] | None = None,
               resolution: str = "1 hour") -> LoadSeries:
    """Read a comma-separated load table with a header row.

    Rows are numbered from 1 (the first data row after the header).  The
    time column defaults to the first column and the value columns to all
    others.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: file not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        time_column = time_column or header[0]
        if value_columns is None:
            value_columns = [h for h in header if h != time_column]
        for col in [time_column, *value_columns]:
            if col not in header:
                raise IngestionError(f"{path}: missing column {col!r}")
        t_idx = header.index(time_column)
        v_idx = [header.index(c) for c in value_columns]
        stamps, rows, prev = [], [], None
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            try:
                stamp = _parse_time(row[t_idx])
            except ValueError:
                raise IngestionError(f"{path}: row {row_no}, column {time_column!r}: "
                                     f"unparseable timestamp {row[t_idx]!r}") from None
            if prev is not None:
                try:
                    ordered = stamp > prev
                except TypeError:
                    raise IngestionError(f"{path}: row {row_no}, column {time_column!r}: "
                                         "mixed timestamp formats") from None
                if not ordered:
                    raise IngestionError(f"{path}: row {row_no}, column {time_column!r}: "
                                         "timestamps are not strictly increasing")
            prev = stamp
            vals = []
            for j, col in zip(v_idx, value_columns):
                cell = row[j].strip()
                try:
                    x = float(cell)
                except ValueError:
                    raise IngestionError(f"{path}: row {row_no}, column {col!r}: "
                                         f"unparseable number {cell!r}") from None
                if not math.isfinite(x):
                    raise IngestionError(f"{path}: row {row_no}, column {col!r}: missing value {cell!r}")
                vals.append(x)
            stamps.append(row[t_idx].strip())
            rows.append(vals)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return LoadSeries(np.array(rows), resolution=resolution,
                      channel_names=list(value_columns), timestamps=stamps)


def export_csv(series: LoadSeries, path, time_column: str = "time") -> None:
    stamps = series.timestamps or [str(i) for i in range(len(series))]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([time_column, *series.channel_names])
        for stamp, row in zip(stamps, series.values):
            w.writerow([stamp, *(repr(float(x)) for x in row)])


# --------------------------------------------------------------------------
# windows


def window_count(length: int, l: int, h: int, stride: int) -> int:
    return (length - l - h) // stride + 1


def make_windows(series: LoadSeries | np.ndarray, l: int, h: int, stride: int = 1) -> list[LoadWindow]:
    values = series.values if isinstance(series, LoadSeries) else np.asarray(series, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    T = values.shape[0]
    if l < 1 or h < 1 or stride < 1:
        raise ContractError("l, h and stride must be positive")
    if l + h > T:
        raise ContractError(f"window l+h={l + h} exceeds series length {T}")
    n = window_count(T, l, h, stride)
    return [LoadWindow(values[s:s + l], values[s + l:s + l + h], s)
            for s in (i * stride for i in range(n))]


def instance_normalize(window: LoadWindow, eps: float = 1e-12) -> LoadWindow:
    """Standardize the history per channel; constant channels map to zero."""
    if window.norm_stats is not None:
        raise ContractError("window is already normalized")
    x = window.history
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    constant = sd <= eps * np.maximum(1.0, np.abs(mu))
    safe = np.where(constant, 1.0, sd)
    hist = np.where(constant, 0.0, (x - mu) / safe)
    stats = NormStats(mean=mu, std=np.where(constant, 0.0, sd), constant=constant)
    return replace(window, history=hist, norm_stats=stats)


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Map normalized values (any leading shape, channels last) back to load units."""
    return values * stats.std + stats.mean


def denormalize_window(window: LoadWindow) -> LoadWindow:
    if window.norm_stats is None:
        raise ContractError("window is not normalized")
    return replace(window, history=denormalize(window.history, window.norm_stats), norm_stats=None)


def patchify(history: np.ndarray, patch_len: int, stride: int) -> PatchSet:
    """Cut ``history`` (l, d) into overlapping patches, left to right.

    If the last patch runs past the end, it is completed by repeating the
    final row; ``pad`` counts the repeated rows.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim == 1:
        history = history[:, None]
    l = history.shape[0]
    if patch_len < 1 or stride < 1:
        raise ContractError("patch_len and stride must be positive")
    if patch_len > l:
        raise ContractError(f"patch_len={patch_len} exceeds history length {l}")
    n = 1 + math.ceil((l - patch_len) / stride)
    covered = (n - 1) * stride + patch_len
    pad = covered - l
    if pad:
        history = np.concatenate([history, np.repeat(history[-1:], pad, axis=0)])
    idx = np.arange(n)[:, None] * stride + np.arange(patch_len)[None, :]
    return PatchSet(history[idx], patch_len, stride, pad)


def unpatchify(ps: PatchSet, length: int) -> np.ndarray:
    """Rebuild the (length, d) history from a PatchSet, first writer wins."""
    d = ps.patches.shape[2]
    out = np.full((length, d), np.nan)
    for i, patch in enumerate(ps.patches):
        for j in range(ps.patch_len):
            t = i * ps.stride + j
            if t < length and np.isnan(out[t, 0]):
                out[t] = patch[j]
    return out


# --------------------------------------------------------------------------
# splits


@dataclass
class Splits:
    train: list
    val: list
    test: list


def few_shot_split(windows: Sequence, train_fraction: float = 1.0, seed: int = 0,
                   ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> Splits:
    """Chronological train/val/test split, then keep the first
    ``ceil(train_fraction * n_train)`` training windows.

    ``seed`` is accepted for interface symmetry; the truncation is a
    chronological prefix and uses no randomness.
    """
    del seed
    if not 0.0 < train_fraction <= 1.0:
        raise ConfigError("train_fraction must lie in (0, 1]")
    n = len(windows)
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    train = list(windows[:n_train])
    val = list(windows[n_train:n_train + n_val])
    test = list(windows[n_train + n_val:])
    keep = math.ceil(train_fraction * len(train) - 1e-9)
    train = train[:keep]
    if not train:
        raise ConfigError("few-shot split produced an empty training set")
    return Splits(train, val, test)
