"""CSV ingestion, the two scaling pipelines, and sliding-window datasets.

Volume pipeline: each column is divided by its rolling median over the
``window`` periods ending ``shift`` rows earlier (no foresight), then by its
maximum over the training rows.  Absolute-return pipeline: ``|c_t/c_{t-1} - 1|``
divided by its training maximum.  Test values above 1 are expected and kept.

Splits are chronological on rows: the first ``train_fraction`` of rows is the
training region (the last ``val_fraction`` of it being validation) and the
rest is test.  A window belongs to a split only if all of its input and
target rows do; windows straddling a boundary are left out.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import checkpoint
from .errors import DataError

log = logging.getLogger(__name__)

PIPELINES = ("volume", "absreturn")
POLICIES = ("error", "forward_fill")
TWO_WEEKS_HOURLY = 336


@dataclass
class RawSeries:
    timestamps: np.ndarray
    names: list[str]
    values: np.ndarray
    target: str

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape != (len(self.timestamps), len(self.names)):
            raise DataError(f"values of shape {self.values.shape} do not match "
                            f"{len(self.timestamps)} timestamps x {len(self.names)} columns")
        if self.target not in self.names:
            raise DataError(f"target column {self.target!r} not among {self.names}")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            row = int(np.flatnonzero(np.diff(self.timestamps) <= 0)[0]) + 1
            raise DataError(f"timestamps not strictly increasing at row {row}")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def target_index(self) -> int:
        return self.names.index(self.target)

    def column(self, name: str) -> np.ndarray:
        if name not in self.names:
            raise DataError(f"no column named {name!r}")
        return self.values[:, self.names.index(name)]


def _parse_timestamp(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def read_header(path) -> list[str]:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise DataError(f"{path}: empty file")
    return [h.strip() for h in header]


def load_csv(path, target: str, policy: str = "error") -> RawSeries:
    """Read ``timestamp,<col1>,<col2>,...`` into a :class:`RawSeries`.

    Line numbers in error messages count the header as line 1.
    """
    if policy not in POLICIES:
        raise DataError(f"unknown missing-value policy {policy!r}; expected one of {POLICIES}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    names = header[1:]
    if not names:
        raise DataError(f"{path}: no data columns after the timestamp column")
    if target not in names:
        raise DataError(f"{path}: target column {target!r} not found; columns are {names}")
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    stamps = np.empty(len(body))
    values = np.empty((len(body), len(names)))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise DataError(f"{path}: line {line} has {len(row)} fields, expected {len(header)}")
        try:
            stamps[i] = _parse_timestamp(row[0])
        except ValueError:
            raise DataError(f"{path}: line {line}: unparseable timestamp {row[0]!r}") from None
        if i > 0 and stamps[i] == stamps[i - 1]:
            raise DataError(f"{path}: line {line}: duplicate timestamp {row[0]!r}")
        if i > 0 and stamps[i] < stamps[i - 1]:
            raise DataError(f"{path}: line {line}: timestamp {row[0]!r} goes backwards")
        for j, cell in enumerate(row[1:]):
            try:
                v = float(cell)
                if not math.isfinite(v):
                    raise ValueError
            except ValueError:
                if policy == "forward_fill" and i > 0:
                    v = values[i - 1, j]
                else:
                    raise DataError(f"{path}: line {line}, column {names[j]!r}: "
                                    f"missing or non-numeric value {cell!r}") from None
            values[i, j] = v
    return RawSeries(stamps, names, values, target)


def write_csv(path, series: RawSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", *series.names])
        for t, row in zip(series.timestamps, series.values):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------


@dataclass
class ScalingState:
    pipeline: str
    window: int
    shift: int
    maxima: np.ndarray
    train_rows: int
    dropped: int

    def __post_init__(self):
        self.maxima = np.asarray(self.maxima, dtype=np.float64).reshape(-1)
        if self.pipeline not in PIPELINES:
            raise DataError(f"unknown pipeline {self.pipeline!r}")
        if np.any(self.maxima <= 0):
            raise DataError("scaling maxima must be strictly positive")

    def meta(self) -> dict:
        return {"kind": "scaling", "pipeline": self.pipeline, "window": self.window,
                "shift": self.shift, "train_rows": self.train_rows, "dropped": self.dropped}

    @classmethod
    def from_parts(cls, meta: dict, tensors: dict) -> "ScalingState":
        return cls(meta["pipeline"], int(meta["window"]), int(meta["shift"]),
                   tensors["maxima"], int(meta["train_rows"]), int(meta["dropped"]))

    def to_bytes(self) -> bytes:
        return checkpoint.dumps(self.meta(), {"maxima": self.maxima})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ScalingState":
        meta, tensors = checkpoint.loads(blob)
        if meta.get("kind") != "scaling":
            raise DataError(f"container holds {meta.get('kind')!r}, not a scaling state")
        return cls.from_parts(meta, tensors)


def _as_2d(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    return (arr[:, None], True) if arr.ndim == 1 else (arr, False)


def rolling_median(x, window: int) -> np.ndarray:
    """``out[e] = median(x[e-window+1 .. e])`` for ``e >= window-1``; NaN before."""
    arr, squeeze = _as_2d(x)
    out = np.full(arr.shape, np.nan)
    if len(arr) >= window:
        out[window - 1:] = np.median(sliding_window_view(arr, window, axis=0), axis=-1)
    return out[:, 0] if squeeze else out


def _fit_maxima(ratio: np.ndarray, train_rows: int) -> np.ndarray:
    if train_rows < 1:
        raise DataError("no training rows to fit the scaling maxima on")
    maxima = ratio[:train_rows].max(axis=0)
    if np.any(maxima <= 0):
        cols = np.flatnonzero(maxima <= 0).tolist()
        log.warning("columns %s are identically zero on the training rows; left unscaled", cols)
        maxima = np.where(maxima > 0, maxima, 1.0)
    return maxima


def volume_scale(series, window: int = TWO_WEEKS_HOURLY, shift: int = 1, *,
                 train_fraction: float = 0.8, state: ScalingState | None = None):
    """Moving-median then max scaling.

    Output row ``r`` corresponds to input row ``r + state.dropped``, where
    ``dropped = window + shift - 1`` rows lack a full median history.
    Passing a fitted ``state`` reuses its maxima instead of refitting.
    """
    if window < 1 or shift < 0:
        raise DataError(f"need window >= 1 and shift >= 0, got {window}, {shift}")
    x, squeeze = _as_2d(series)
    dropped = window + shift - 1
    if len(x) <= dropped:
        raise DataError(f"series of length {len(x)} is too short for window {window} "
                        f"and shift {shift}; need more than {dropped} rows")
    med = rolling_median(x, window)
    denom = med[window - 1:len(x) - shift]
    if np.any(denom == 0):
        row = int(np.flatnonzero((denom == 0).any(axis=1))[0]) + window - 1
        raise DataError(f"rolling median is zero ending at row {row}; degenerate series")
    ratio = x[dropped:] / denom
    if state is None:
        train_rows = int(train_fraction * len(ratio))
        state = ScalingState("volume", window, shift, _fit_maxima(ratio, train_rows),
                             train_rows, dropped)
    elif (state.pipeline, state.window, state.shift) != ("volume", window, shift):
        raise DataError("scaling state was fitted with different pipeline settings")
    scaled = ratio / state.maxima
    return (scaled[:, 0] if squeeze else scaled), state


def absreturn_scale(closes, *, train_fraction: float = 0.8, state: ScalingState | None = None):
    """Absolute percentage change between consecutive closes, over its training maximum."""
    c, squeeze = _as_2d(closes)
    if len(c) < 2:
        raise DataError("need at least two closes")
    if np.any(c <= 0):
        row = int(np.flatnonzero((c <= 0).any(axis=1))[0])
        raise DataError(f"non-positive close at row {row}")
    r = np.abs(c[1:] / c[:-1] - 1.0)
    if state is None:
        train_rows = int(train_fraction * len(r))
        state = ScalingState("absreturn", 1, 0, _fit_maxima(r, train_rows), train_rows, 1)
    elif state.pipeline != "absreturn":
        raise DataError("scaling state was fitted for a different pipeline")
    scaled = r / state.maxima
    return (scaled[:, 0] if squeeze else scaled), state


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


def default_seq_len(n_ahead: int) -> int:
    return max(45, 5 * n_ahead)


@dataclass
class ForecastDataset:
    series: np.ndarray
    target_col: int
    n_ahead: int
    seq_len: int
    inputs: np.ndarray
    targets: np.ndarray
    origins: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    train_fraction: float = 0.8
    val_fraction: float = 0.2
    state: ScalingState | None = field(default=None, repr=False)

    @property
    def d_in(self) -> int:
        return self.series.shape[1]

    def __len__(self) -> int:
        return len(self.origins)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        return self.inputs[idx], self.targets[idx]

    def boundaries(self) -> tuple[int, int]:
        """Row indices where validation and test regions begin."""
        n = len(self.series)
        test_start = int(self.train_fraction * n)
        return int((1.0 - self.val_fraction) * test_start), test_start

    def to_bytes(self) -> bytes:
        meta = {"kind": "dataset", "target_col": self.target_col, "n_ahead": self.n_ahead,
                "seq_len": self.seq_len, "train_fraction": self.train_fraction,
                "val_fraction": self.val_fraction,
                "scaling": self.state.meta() if self.state is not None else None}
        tensors = {"series": self.series}
        if self.state is not None:
            tensors["maxima"] = self.state.maxima
        return checkpoint.dumps(meta, tensors)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ForecastDataset":
        meta, tensors = checkpoint.loads(blob)
        if meta.get("kind") != "dataset":
            raise DataError(f"container holds {meta.get('kind')!r}, not a dataset")
        state = ScalingState.from_parts(meta["scaling"], tensors) if meta["scaling"] else None
        return make_windows(tensors["series"], meta["n_ahead"], target_col=meta["target_col"],
                            seq_len=meta["seq_len"], train_fraction=meta["train_fraction"],
                            val_fraction=meta["val_fraction"], state=state)


def make_windows(scaled, n_ahead: int, *, target_col: int = 0, seq_len: int | None = None,
                 train_fraction: float = 0.8, val_fraction: float = 0.2,
                 state: ScalingState | None = None) -> ForecastDataset:
    """Stride-1 windows: inputs are rows ``t-seq_len+1 .. t``, targets ``t+1 .. t+n_ahead``."""
    series, _ = _as_2d(scaled)
    if n_ahead < 1:
        raise DataError(f"n_ahead must be >= 1, got {n_ahead}")
    seq_len = seq_len or default_seq_len(n_ahead)
    n_rows = len(series)
    need = seq_len + n_ahead
    if n_rows < need:
        raise DataError(f"series has {n_rows} rows; at least {need} are needed "
                        f"for seq_len {seq_len} and n_ahead {n_ahead}")
    if not 0 <= target_col < series.shape[1]:
        raise DataError(f"target column {target_col} out of range for {series.shape[1]} columns")
    origins = np.arange(seq_len - 1, n_rows - n_ahead)
    views = sliding_window_view(series, seq_len, axis=0)  # (n, C, seq_len)
    inputs = np.ascontiguousarray(np.swapaxes(views[:len(origins)], 1, 2))
    targets = np.stack([series[origins + h, target_col] for h in range(1, n_ahead + 1)], axis=1)

    test_start = int(train_fraction * n_rows)
    val_start = int((1.0 - val_fraction) * test_start)
    first = origins - seq_len + 1
    last = origins + n_ahead
    train_idx = np.flatnonzero(last < val_start)
    val_idx = np.flatnonzero((first >= val_start) & (last < test_start))
    test_idx = np.flatnonzero(first >= test_start)
    return ForecastDataset(series, target_col, n_ahead, seq_len, inputs, targets, origins,
                           train_idx, val_idx, test_idx, train_fraction, val_fraction, state)


def prepare_dataset(raw: RawSeries, task: str, n_ahead: int, *,
                    median_window: int = TWO_WEEKS_HOURLY, seq_len: int | None = None,
                    train_fraction: float = 0.8, val_fraction: float = 0.2,
                    state: ScalingState | None = None) -> tuple[ForecastDataset, np.ndarray]:
    """Run a task's pipeline on raw data; returns the dataset and the timestamp of each row."""
    if task == "volume":
        scaled, state = volume_scale(raw.values, median_window, n_ahead,
                                     train_fraction=train_fraction, state=state)
        target_col = raw.target_index
    elif task == "absreturn":
        scaled, state = absreturn_scale(raw.column(raw.target), train_fraction=train_fraction,
                                        state=state)
        target_col = 0
    else:
        raise DataError(f"unknown task {task!r}; expected one of {PIPELINES}")
    ds = make_windows(scaled, n_ahead, target_col=target_col, seq_len=seq_len,
                      train_fraction=train_fraction, val_fraction=val_fraction, state=state)
    return ds, raw.timestamps[state.dropped:]


def save_dataset(path, ds: ForecastDataset) -> None:
    Path(path).write_bytes(ds.to_bytes())


def load_dataset(path) -> ForecastDataset:
    return ForecastDataset.from_bytes(Path(path).read_bytes())
