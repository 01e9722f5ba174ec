"""Loss and evaluation metric."""

from __future__ import annotations

import warnings

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def mse_loss(pred, truth) -> Tensor:
    """Mean over all elements of the squared error (differentiable in ``pred``)."""
    pred, truth = T.as_tensor(pred), T.as_tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs truth {truth.shape}")
    return T.mean(T.square(pred - truth))


def mse(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs truth {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def r2_metric(pred, truth) -> tuple[float, np.ndarray]:
    """``1 - SSE/SST`` pooled over all columns and per column.

    Columns are horizons.  SST is taken about each column's mean; the pooled
    score divides total SSE by total SST.  A zero-variance truth gives NaN
    with a warning.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"r2_metric: prediction {pred.shape} vs truth {truth.shape}")
    if pred.ndim == 1:
        pred, truth = pred[:, None], truth[:, None]
    sse = ((pred - truth) ** 2).sum(axis=0)
    sst = ((truth - truth.mean(axis=0)) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cols = np.where(sst > 0, 1.0 - sse / np.where(sst > 0, sst, 1.0), np.nan)
    if np.any(sst <= 0):
        warnings.warn("R2 undefined for zero-variance truth; reporting NaN", RuntimeWarning,
                      stacklevel=2)
    total = sst.sum()
    pooled = float(1.0 - sse.sum() / total) if total > 0 else float("nan")
    return pooled, cols
