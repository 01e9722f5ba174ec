"""Adam, the two validation callbacks, and the epoch loop."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import clone_model, load_state_dict, state_dict
from .errors import DataError, NumericalError
from .metrics import mse, r2_metric

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 100
    early_stop_patience: int = 6
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    min_lr: float = 1e-6
    seed: int = 0
    deterministic: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ValueError("patiences must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError(f"plateau factor must lie in (0, 1), got {self.plateau_factor}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.threads < 1:
            raise ValueError("batch_size, max_epochs and threads must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kw) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState, lr: float) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new arrays and advances ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise T.ShapeError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
    state.step += 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


class Adam:
    """Applies :func:`adam_step` to a model's parameter tensors in place."""

    def __init__(self, params: dict[str, T.Tensor], lr: float = 1e-3):
        self.params = params
        self.lr = lr
        self.state = OptimizerState.zeros_like({k: p.data for k, p in params.items()})

    def step(self, grads: dict[str, np.ndarray]) -> None:
        new = adam_step({k: p.data for k, p in self.params.items()}, grads, self.state, self.lr)
        for name, p in self.params.items():
            p.data = new[name]


# ---------------------------------------------------------------------------
# Callbacks
# ---------------------------------------------------------------------------


@dataclass
class PlateauCallbacks:
    """Early stopping and learning-rate halving driven by validation loss.

    An epoch improves only if its loss is strictly below the best so far.
    When both patiences run out on the same epoch, stopping wins and the
    learning rate is left alone.
    """

    early_stop_patience: int = 6
    plateau_patience: int = 3
    factor: float = 0.5
    min_lr: float = 1e-6
    best: float = math.inf
    best_epoch: int = 0
    stop_wait: int = 0
    lr_wait: int = 0

    def update(self, epoch: int, val_loss: float, lr: float) -> tuple[bool, bool, float]:
        """Returns ``(improved, stop, next_lr)``."""
        if val_loss < self.best:
            self.best, self.best_epoch = val_loss, epoch
            self.stop_wait = self.lr_wait = 0
            return True, False, lr
        self.stop_wait += 1
        self.lr_wait += 1
        if self.stop_wait >= self.early_stop_patience:
            return False, True, lr
        if self.lr_wait >= self.plateau_patience:
            self.lr_wait = 0
            return False, False, max(lr * self.factor, self.min_lr)
        return False, False, lr


# ---------------------------------------------------------------------------
# Fit
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class FitResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stopped_early: bool = False

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for r in self.history:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])


def evaluate_loss(model, x: np.ndarray, y: np.ndarray, batch_size: int = 1024) -> float:
    return mse(model.predict(x, batch_size), y)


def _batch_grads(model, x: np.ndarray, y: np.ndarray, denom: int):
    params = model.named_parameters()
    pred = model.forward(x)
    loss = T.sum_(T.square(pred - y)) / denom
    T.backward(loss)
    return loss.item(), {k: p.grad for k, p in params.items()}


class _GradientWorkers:
    """Splits a batch into contiguous chunks, one model replica per chunk."""

    def __init__(self, model, threads: int, deterministic: bool):
        self.model = model
        self.threads = threads
        self.deterministic = deterministic
        self.replicas = [model] + [clone_model(model) for _ in range(threads - 1)]
        self.pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def __call__(self, x: np.ndarray, y: np.ndarray):
        denom = y.size
        if self.pool is None or len(x) < self.threads:
            return _batch_grads(self.model, x, y, denom)
        master = self.model.named_parameters()
        for replica in self.replicas[1:]:
            for name, p in replica.named_parameters().items():
                p.data = master[name].data
        chunks = np.array_split(np.arange(len(x)), self.threads)
        futures = [self.pool.submit(_batch_grads, r, x[c], y[c], denom)
                   for r, c in zip(self.replicas, chunks)]
        if self.deterministic:
            results = [f.result() for f in futures]
        else:
            results = [f.result() for f in as_completed(futures)]
        loss = sum(r[0] for r in results)
        grads = {k: sum(r[1][k] for r in results[1:]) + results[0][1][k] for k in master}
        return loss, grads


def fit(model, dataset, config: TrainConfig, on_epoch=None) -> FitResult:
    """Train with shuffled minibatches; restores the best-validation weights at the end."""
    x_tr, y_tr = dataset.split("train")
    x_va, y_va = dataset.split("val")
    if len(x_tr) == 0 or len(x_va) == 0:
        raise DataError(f"need nonempty train and validation splits, got {len(x_tr)} and {len(x_va)}")
    rng = np.random.default_rng(config.seed)
    params = model.named_parameters()
    opt = Adam(params, config.learning_rate)
    callbacks = PlateauCallbacks(config.early_stop_patience, config.plateau_patience,
                                 config.plateau_factor, config.min_lr)
    workers = _GradientWorkers(model, config.threads, config.deterministic)
    result = FitResult()
    best_weights = state_dict(model)
    try:
        for epoch in range(1, config.max_epochs + 1):
            lr = opt.lr
            order = rng.permutation(len(x_tr))
            total = 0.0
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                loss, grads = workers(x_tr[idx], y_tr[idx])
                if not math.isfinite(loss):
                    raise NumericalError(f"non-finite training loss at epoch {epoch}")
                opt.step(grads)
                total += loss * len(idx)
            train_loss = total / len(order)
            val_loss = evaluate_loss(model, x_va, y_va)
            if not math.isfinite(val_loss):
                raise NumericalError(f"non-finite validation loss at epoch {epoch}")
            result.history.append(EpochRecord(epoch, train_loss, val_loss, lr))
            improved, stop, opt.lr = callbacks.update(epoch, val_loss, lr)
            if improved:
                best_weights = state_dict(model)
            log.info("epoch %d train %.6g val %.6g lr %.3g", epoch, train_loss, val_loss, lr)
            if on_epoch is not None:
                on_epoch(result.history[-1])
            if stop:
                result.stopped_early = True
                break
    finally:
        workers.close()
    load_state_dict(model, best_weights)
    result.best_epoch = callbacks.best_epoch
    result.best_val_loss = callbacks.best
    return result


@dataclass
class Evaluation:
    r2: float
    r2_per_horizon: np.ndarray
    mse: float
    mse_per_horizon: np.ndarray
    n: int


def evaluate(model, x: np.ndarray, y: np.ndarray) -> Evaluation:
    pred = model.predict(x)
    return score(pred, y)


def score(pred: np.ndarray, y: np.ndarray) -> Evaluation:
    pooled, cols = r2_metric(pred, y)
    per_h = ((pred - y) ** 2).mean(axis=0)
    return Evaluation(pooled, cols, mse(pred, y), per_h, len(y))
