"""Comparison methods: a flatten-then-dense MLP and a moving-average benchmark."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .metrics import r2_metric
from .nn import DenseParams, dense_forward, named_parameters
from .tensor import ShapeError, Tensor


@dataclass
class MlpConfig:
    d_in: int
    seq_len: int
    n_ahead: int = 1
    hidden: int = 100
    n_hidden: int = 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class MlpNetwork:
    config: MlpConfig
    hidden: list[DenseParams]
    out: DenseParams
    kind: str = field(default="mlp", init=False)

    @classmethod
    def init(cls, config: MlpConfig, seed: int = 0) -> "MlpNetwork":
        rng = np.random.default_rng(seed)
        dims = [config.seq_len * config.d_in] + [config.hidden] * config.n_hidden
        hidden = [DenseParams.init(a, b, rng, activation="relu") for a, b in zip(dims, dims[1:])]
        return cls(config, hidden, DenseParams.init(dims[-1], config.n_ahead, rng))

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(named_parameters({"hidden": self.hidden, "out": self.out}))

    def forward(self, x) -> Tensor:
        return mlp_forward(x, self)

    def predict(self, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.concatenate([self.forward(x[i:i + batch_size]).data
                               for i in range(0, len(x), batch_size)], axis=0)


def mlp_forward(x, net: MlpNetwork) -> Tensor:
    h = T.as_tensor(x)
    unbatched = h.ndim == 2
    if unbatched:
        h = T.reshape(h, (1,) + h.shape)
    cfg = net.config
    if h.ndim != 3 or h.shape[1:] != (cfg.seq_len, cfg.d_in):
        raise ShapeError(f"mlp_forward: expected (batch, {cfg.seq_len}, {cfg.d_in}), got {h.shape}")
    h = T.flatten(h)
    for layer in net.hidden:
        h = dense_forward(h, layer)
    y = dense_forward(h, net.out)
    return T.reshape(y, (cfg.n_ahead,)) if unbatched else y


# ---------------------------------------------------------------------------
# Moving-average benchmark
# ---------------------------------------------------------------------------


def moving_average_predict(series, k: int, n_ahead: int = 1, times=None):
    """Predict ``x[t+1 .. t+n_ahead]`` by ``mean(x[t-k+1 .. t])``.

    ``times`` selects the forecast origins ``t``; by default every origin
    with a full window of history and a full horizon is used.  Origins
    without ``k`` points of history are dropped, never truncated.
    Returns ``(predictions, truth, times)`` with predictions and truth of
    shape ``(len(times), n_ahead)``.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if k < 1:
        raise ValueError(f"window must be >= 1, got {k}")
    if times is None:
        times = np.arange(k - 1, len(x) - n_ahead)
    times = np.asarray(times, dtype=np.intp)
    times = times[(times >= k - 1) & (times + n_ahead < len(x))]
    csum = np.concatenate([[0.0], np.cumsum(x)])
    means = (csum[times + 1] - csum[times + 1 - k]) / k
    preds = np.repeat(means[:, None], n_ahead, axis=1)
    truth = np.stack([x[times + h] for h in range(1, n_ahead + 1)], axis=1) if len(times) \
        else np.zeros((0, n_ahead))
    return preds, truth, times


@dataclass
class BenchResult:
    """Best window by R2 on the evaluation origins.

    The window is chosen on the same data it is scored on, so the score is
    an optimistic upper bound for this benchmark, not a fair forecast.
    """

    window: int
    r2: float
    per_horizon: np.ndarray
    scores: dict[int, float]


def moving_average_sweep(series, times, n_ahead: int = 1, windows=range(1, 51)) -> BenchResult:
    """Score every window on the given origins and keep the best (smallest on ties)."""
    times = np.asarray(times, dtype=np.intp)
    scores: dict[int, float] = {}
    per_h: dict[int, np.ndarray] = {}
    for k in windows:
        if k < 1 or k > 50:
            raise ValueError(f"benchmark window must lie in [1, 50], got {k}")
        preds, truth, kept = moving_average_predict(series, k, n_ahead, times)
        if len(kept) != len(times):
            raise ValueError(f"window {k} needs more history than the first origin has")
        pooled, cols = r2_metric(preds, truth)
        scores[k] = pooled
        per_h[k] = cols
    finite = {k: v for k, v in scores.items() if np.isfinite(v)}
    if finite:
        best = max(finite, key=lambda k: (finite[k], -k))
    else:
        best = min(scores)
    return BenchResult(best, scores[best], per_h[best], scores)
