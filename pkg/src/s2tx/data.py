"""Dataset ingestion, splits, sliding windows, missing-value corruption and synthetic series."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
import pandas as pd
import torch
from torch.utils.data import Dataset

from .config import ExperimentConfig, default_data_dir
from .errors import ConfigError, DataError
from .patching import WindowSpec


@dataclass(frozen=True)
class DatasetInfo:
    name: str
    filename: str
    n_vars: int
    n_steps: int
    split: str  # "ett_hour", "ett_minute" or "ratio"


KNOWN_DATASETS = {
    info.name: info
    for info in (
        DatasetInfo("etth1", "ETTh1.csv", 7, 17420, "ett_hour"),
        DatasetInfo("etth2", "ETTh2.csv", 7, 17420, "ett_hour"),
        DatasetInfo("ettm1", "ETTm1.csv", 7, 69680, "ett_minute"),
        DatasetInfo("ettm2", "ETTm2.csv", 7, 69680, "ett_minute"),
        DatasetInfo("exchange", "exchange_rate.csv", 8, 7588, "ratio"),
        DatasetInfo("weather", "weather.csv", 21, 52696, "ratio"),
        DatasetInfo("ecl", "electricity.csv", 321, 26304, "ratio"),
    )
}


def _lookup(name_or_file: str) -> DatasetInfo | None:
    key = name_or_file.lower()
    if key in KNOWN_DATASETS:
        return KNOWN_DATASETS[key]
    for info in KNOWN_DATASETS.values():
        if info.filename.lower() == Path(key).name:
            return info
    return None


@dataclass
class SeriesFrame:
    """A D-variate series: timestamps (T,), values (T, D) and column names."""

    timestamps: np.ndarray
    values: np.ndarray
    names: list[str]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("values must be a (T, D) matrix")
        if len(self.timestamps) != self.values.shape[0]:
            raise DataError("timestamps and values disagree in length")
        if len(self.names) != self.values.shape[1]:
            raise DataError("one name per column is required")
        if not np.isfinite(self.values).all():
            raise DataError("series contains missing or non-finite cells")
        ts = np.asarray(self.timestamps)
        if len(ts) > 1 and not (ts[1:] > ts[:-1]).all():
            raise DataError("timestamps are not strictly increasing")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path: str | os.PathLike) -> Path:
        """Write the ``date,<names...>`` CSV layout read by :func:`load_csv`."""
        path = Path(path)
        frame = pd.DataFrame(self.values, columns=self.names)
        frame.insert(0, "date", pd.to_datetime(self.timestamps).strftime("%Y-%m-%d %H:%M:%S"))
        frame.to_csv(path, index=False, float_format="%.17g")
        return path


def load_csv(
    path: str | os.PathLike,
    date_column: str = "date",
    value_columns: Sequence[str] | None = None,
    dataset: str | None = None,
) -> SeriesFrame:
    """Read a header-first CSV into a SeriesFrame.

    Row and column counts are checked when ``dataset`` (or the file name)
    identifies one of :data:`KNOWN_DATASETS`. Error messages cite 1-based
    file line numbers.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    try:
        table = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path}: file is empty") from exc
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if table.empty:
        raise DataError(f"{path}: no data rows")
    if date_column not in table.columns:
        raise DataError(f"{path}: missing date column {date_column!r}")
    if value_columns is None:
        value_columns = [c for c in table.columns if c != date_column]
    missing = [c for c in value_columns if c not in table.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")

    values = np.empty((len(table), len(value_columns)))
    for j, column in enumerate(value_columns):
        text = table[column].str.strip()
        bad = pd.to_numeric(text, errors="coerce").isna().to_numpy()
        if bad.any():
            row = int(np.argmax(bad))
            raise DataError(
                f"{path}:{row + 2}: unparseable value {table[column].iloc[row]!r} in column {column!r}"
            )
        # numpy's parser rounds correctly, so written values read back exactly
        values[:, j] = text.to_numpy().astype(np.float64)
    stamps = pd.to_datetime(table[date_column], errors="coerce")
    if stamps.isna().any():
        row = int(np.argmax(stamps.isna().to_numpy()))
        raise DataError(f"{path}:{row + 2}: unparseable timestamp {table[date_column].iloc[row]!r}")
    stamps = stamps.to_numpy()
    if len(stamps) > 1:
        order = stamps[1:] > stamps[:-1]
        if not order.all():
            row = int(np.argmin(order)) + 1
            raise DataError(f"{path}:{row + 2}: timestamps are not strictly increasing")

    info = _lookup(dataset) if dataset else _lookup(path.name)
    if info is not None:
        if values.shape != (info.n_steps, info.n_vars):
            raise DataError(
                f"{path}: expected {info.n_steps} rows x {info.n_vars} variates for "
                f"{info.name}, found {values.shape[0]} x {values.shape[1]}"
            )
    return SeriesFrame(stamps, values, list(value_columns), {"source": str(path)})


# -- splits and normalization ---------------------------------------------

@dataclass
class SplitSpec:
    """Contiguous [start, end) bounds per split plus train-segment statistics."""

    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        bounds = (self.train, self.val, self.test)
        for lo, hi in bounds:
            if lo >= hi:
                raise ConfigError(f"empty split {lo}:{hi}")
        if not (self.train[1] <= self.val[0] and self.val[1] <= self.test[0]):
            raise ConfigError("splits must be ordered and non-overlapping")

    def bounds(self, name: str) -> tuple[int, int]:
        return getattr(self, name)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def split_bounds(n_steps: int, protocol: str) -> tuple[tuple[int, int], ...]:
    """Train/val/test boundaries: 12/4/4 months for ETT, else 0.7/0.1/0.2."""
    if protocol in ("ett_hour", "ett_minute"):
        month = 30 * 24 * (4 if protocol == "ett_minute" else 1)
        a, b, c = 12 * month, 16 * month, 20 * month
        if n_steps < c:
            raise ConfigError(f"ETT protocol needs {c} steps, series has {n_steps}")
        return (0, a), (a, b), (b, c)
    n_train = int(n_steps * 0.7)
    n_test = int(n_steps * 0.2)
    return (0, n_train), (n_train, n_steps - n_test), (n_steps - n_test, n_steps)


def make_split(frame: SeriesFrame, protocol: str = "ratio") -> SplitSpec:
    train, val, test = split_bounds(frame.n_steps, protocol)
    segment = frame.values[train[0]:train[1]]
    mean = segment.mean(axis=0)
    std = segment.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return SplitSpec(train, val, test, mean, std)


# -- windows --------------------------------------------------------------

@dataclass
class ForecastBatch:
    inputs: torch.Tensor  # (batch, D, L)
    targets: torch.Tensor  # (batch, D, H)
    split: SplitSpec | None = None


def window_count(segment_len: int, lookback: int, horizon: int, stride: int = 1) -> int:
    if segment_len < lookback + horizon:
        raise ConfigError(
            f"segment of {segment_len} steps is shorter than lookback + horizon = "
            f"{lookback + horizon}"
        )
    return (segment_len - lookback - horizon) // stride + 1


class WindowDataset(Dataset):
    """Sliding (input, target) windows over one normalized segment.

    ``inputs`` may be a corrupted copy of ``segment``; targets always come
    from the clean segment.
    """

    def __init__(
        self,
        segment: np.ndarray,
        lookback: int,
        horizon: int,
        stride: int = 1,
        inputs: np.ndarray | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        self.count = window_count(len(segment), lookback, horizon, stride)
        self.lookback = lookback
        self.horizon = horizon
        self.stride = stride
        self.targets = torch.as_tensor(np.ascontiguousarray(segment.T), dtype=dtype)
        source = segment if inputs is None else inputs
        self.inputs = torch.as_tensor(np.ascontiguousarray(source.T), dtype=dtype)

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, index: int) -> tuple[torch.Tensor, torch.Tensor]:
        start = index * self.stride
        mid = start + self.lookback
        return self.inputs[:, start:mid], self.targets[:, mid:mid + self.horizon]


def make_windows(
    frame: SeriesFrame,
    split: SplitSpec,
    ws: WindowSpec,
    stride: int = 1,
    segment: str = "test",
    batch_size: int = 32,
) -> Iterator[ForecastBatch]:
    """Yield normalized ForecastBatches from one split, in time order."""
    lo, hi = split.bounds(segment)
    values = split.normalize(frame.values[lo:hi])
    windows = WindowDataset(values, ws.lookback, ws.horizon, stride)
    for start in range(0, len(windows), batch_size):
        items = [windows[i] for i in range(start, min(start + batch_size, len(windows)))]
        yield ForecastBatch(
            torch.stack([x for x, _ in items]), torch.stack([y for _, y in items]), split
        )


# -- missing-value corruption ---------------------------------------------

def missing_mask(length: int, miss_ratio: float, burst_len: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of non-overlapping bursts covering about ``miss_ratio`` of the steps.

    Bursts never start at step 0, so every burst has an observed predecessor.
    """
    n_bursts = int(round(miss_ratio * length / burst_len))
    n_bursts = min(n_bursts, (length - 1) // burst_len)
    mask = np.zeros(length, dtype=bool)
    if n_bursts == 0:
        return mask
    # uniform placement of k non-overlapping bursts: sample in a compressed
    # index space of size (length - 1) - k*(burst_len - 1), then re-expand
    free = (length - 1) - n_bursts * (burst_len - 1)
    picks = np.sort(rng.choice(free, size=n_bursts, replace=False))
    starts = 1 + picks + np.arange(n_bursts) * (burst_len - 1)
    for s in starts:
        mask[s:s + burst_len] = True
    return mask


def corrupt_missing(
    values: np.ndarray, miss_ratio: float, burst_len: int = 4, seed: int = 0
) -> np.ndarray:
    """Blank random bursts per variate and fill them with the last observed value.

    Args:
        values: (T,) or (T, D) array.
        miss_ratio: target fraction of missing steps per variate, in [0, 1).
        burst_len: length of every missing burst.
        seed: RNG seed; equal seeds give identical corruption.
    """
    if not 0.0 <= miss_ratio < 1.0:
        raise ConfigError(f"miss_ratio must lie in [0, 1), got {miss_ratio}")
    if burst_len < 1:
        raise ConfigError("burst_len must be positive")
    array = np.asarray(values, dtype=np.float64)
    squeeze = array.ndim == 1
    array = array.reshape(len(array), -1)
    out = array.copy()
    rng = np.random.default_rng(seed)
    steps = np.arange(len(array))
    for j in range(array.shape[1]):
        mask = missing_mask(len(array), miss_ratio, burst_len, rng)
        if not mask.any():
            continue
        last_seen = np.maximum.accumulate(np.where(mask, 0, steps))
        out[:, j] = array[last_seen, j]
    return out[:, 0] if squeeze else out


# -- synthetic data ---------------------------------------------------------

def _ar1(innovations: np.ndarray, coef: float) -> np.ndarray:
    if coef == 0.0:
        return innovations
    out = np.empty_like(innovations)
    gain = np.sqrt(1.0 - coef**2)
    level = 0.0
    for t, shock in enumerate(innovations):
        level = coef * level + gain * shock
        out[t] = level
    return out


def synth_global_local(
    n_vars: int = 4,
    n_steps: int = 10_000,
    seed: int = 0,
    cross_variate: float = 0.0,
    regime_gain: float = 0.0,
    *,
    lag: int = 0,
    period: int = 500,
    follower_noise: float = 0.3,
    leader_ar: float = 0.0,
) -> SeriesFrame:
    """Noise series with a shared slow regime and leader/follower variate pairs.

    Variates come in pairs ``(2k, 2k+1)``. Every variate carries white noise
    whose standard deviation is ``1 + regime_gain * r_t`` for a slow
    sinusoidal regime ``r_t`` in [0, 1]. The follower of each pair adds
    ``cross_variate`` times its leader delayed by ``lag`` steps; when that
    coupling is non-zero its own noise is scaled by ``follower_noise``.
    ``leader_ar`` turns the leaders into unit-variance AR(1) processes with
    that coefficient. With both couplings and ``leader_ar`` at zero the
    variates are independent white noise.
    """
    if not -1.0 < leader_ar < 1.0:
        raise ConfigError("leader_ar must lie in (-1, 1)")
    if n_vars < 1 or n_steps < 1:
        raise ConfigError("n_vars and n_steps must be positive")
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(n_steps + lag)
    regime = 0.5 * (1.0 + np.sin(2.0 * np.pi * t / period + phase))
    scale = 1.0 + regime_gain * regime
    noise = rng.standard_normal((n_steps + lag, n_vars)) * scale[:, None]
    values = np.empty((n_steps + lag, n_vars))
    for j in range(n_vars):
        if j % 2 == 0:
            values[:, j] = _ar1(noise[:, j], leader_ar)
            continue
        leader = values[:, j - 1]
        delayed = np.concatenate([np.zeros(lag), leader[: len(leader) - lag]]) if lag else leader
        own = follower_noise * noise[:, j] if cross_variate else noise[:, j]
        values[:, j] = cross_variate * delayed + own
    values = values[lag:]
    timestamps = pd.date_range("2016-07-01", periods=n_steps, freq="h").to_numpy()
    names = [f"x{j}" for j in range(n_vars)]
    metadata = {
        "generator": "synth_global_local",
        "n_vars": n_vars,
        "n_steps": n_steps,
        "seed": seed,
        "cross_variate": cross_variate,
        "regime_gain": regime_gain,
        "lag": lag,
        "period": period,
        "follower_noise": follower_noise,
        "leader_ar": leader_ar,
        "phase": float(phase),
        "regime": regime[lag:],
    }
    return SeriesFrame(timestamps, values, names, metadata)


# -- dataset preparation ----------------------------------------------------

@dataclass
class PreparedData:
    """A frame, its split, and the normalized segments."""

    name: str
    frame: SeriesFrame
    split: SplitSpec

    def segment(self, name: str) -> np.ndarray:
        lo, hi = self.split.bounds(name)
        return self.split.normalize(self.frame.values[lo:hi])

    def windows(
        self,
        name: str,
        lookback: int,
        horizon: int,
        stride: int = 1,
        inputs: np.ndarray | None = None,
        dtype: torch.dtype = torch.float32,
    ) -> WindowDataset:
        return WindowDataset(self.segment(name), lookback, horizon, stride, inputs, dtype)


SYNTH_DEFAULTS = dict(n_vars=4, n_steps=6000, cross_variate=-1.0, regime_gain=1.0, lag=48, leader_ar=0.9)


def prepare(frame: SeriesFrame, name: str = "custom", protocol: str | None = None) -> PreparedData:
    if protocol is None:
        info = _lookup(name)
        protocol = info.split if info else "ratio"
    return PreparedData(name, frame, make_split(frame, protocol))


def prepare_dataset(cfg: ExperimentConfig) -> PreparedData:
    """Resolve ``cfg.dataset`` to data.

    ``synth`` generates the synthetic fixture; a known dataset name is read
    from ``cfg.data_path`` or the data directory; anything else is treated
    as a CSV path.
    """
    name = cfg.dataset
    if name.lower() == "synth":
        frame = synth_global_local(seed=cfg.seed, **SYNTH_DEFAULTS)
        return prepare(frame, "synth", "ratio")
    info = _lookup(name)
    if cfg.data_path:
        path = Path(cfg.data_path)
    elif info is not None and not name.lower().endswith(".csv"):
        path = default_data_dir() / info.filename
    else:
        path = Path(name)
    frame = load_csv(path, dataset=info.name if info else None)
    return prepare(frame, info.name if info else path.stem, info.split if info else "ratio")
