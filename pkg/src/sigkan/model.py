"""Signature-weighted KAN layers and the stacked forecasting network.

One layer does::

    Xs  = X * w                               # learnable per-channel scaling
    h   = GRKAN(signature(Xs))                # gating channel, length d_out
    psi = softmax(h)
    out = psi * KAN(Xs)                       # psi broadcast over time steps

The ``sigdense`` variant swaps every KAN sublayer for a dense layer (and the
GRKAN for a plain GRN).  Layers keep the sequence axis, so they stack; the
network flattens the last one into a ReLU dense head and a linear output.
"""

from __future__ import annotations

import contextlib
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import tensor as T
from .errors import NumericalError
from .kan import Grid, KanLinearParams, kan_linear_forward
from .nn import DenseParams, GluParams, dense_forward, glu, layer_norm, named_parameters, param
from .signature import augment_path, sig_dim, signature
from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

VARIANTS = ("sigkan", "sigdense")

Sublayer = Union[KanLinearParams, DenseParams]

_WEIGHT_WATCHERS: list[list[np.ndarray]] = []


@contextlib.contextmanager
def watch_weights():
    """Collect every softmax weight vector produced inside the block."""
    seen: list[np.ndarray] = []
    _WEIGHT_WATCHERS.append(seen)
    try:
        yield seen
    finally:
        _WEIGHT_WATCHERS.remove(seen)


def apply_sublayer(x, p: Sublayer) -> Tensor:
    if isinstance(p, KanLinearParams):
        return kan_linear_forward(x, p)
    return dense_forward(x, p)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class GrkanParams:
    projection: DenseParams
    eta2: Sublayer
    eta1: Sublayer
    glu: GluParams
    ln_gain: Tensor
    ln_bias: Tensor
    epsilon: float = 1e-5

    def __post_init__(self):
        d = self.projection.out_dim
        if self.eta2.out_dim != d or self.eta1.in_dim != d or self.glu.d_model != d:
            raise ShapeError(
                f"GRKAN widths do not chain: projection {d}, eta2 out {self.eta2.out_dim}, "
                f"eta1 in {self.eta1.in_dim}, glu {self.glu.d_model}")

    @property
    def d_model(self) -> int:
        return self.projection.out_dim

    @classmethod
    def init(cls, in_dim: int, d_model: int, rng: np.random.Generator, *,
             variant: str = "sigkan", grid: Grid | None = None,
             epsilon: float = 1e-5) -> "GrkanParams":
        projection = DenseParams.init(in_dim, d_model, rng)
        if variant == "sigkan":
            eta2 = KanLinearParams.init(d_model, d_model, rng, grid=grid, base_activation="elu")
            eta1 = KanLinearParams.init(d_model, d_model, rng, grid=grid, base_activation="silu")
        else:
            eta2 = DenseParams.init(d_model, d_model, rng, activation="elu")
            eta1 = DenseParams.init(d_model, d_model, rng)
        return cls(projection, eta2, eta1, GluParams.init(d_model, rng),
                   param(np.ones(d_model)), param(np.zeros(d_model)), epsilon)


@dataclass
class SigKanLayerParams:
    scale: Tensor
    sig_level: int
    grkan: GrkanParams
    transform: Sublayer
    basepoint: bool = False
    time_channel: bool = False

    def __post_init__(self):
        d_in = self.scale.shape[0]
        if self.transform.in_dim != d_in:
            raise ShapeError(f"transform expects {self.transform.in_dim} inputs, scaling has {d_in}")
        width = self.sig_width(d_in, self.sig_level, self.time_channel)
        if self.grkan.projection.in_dim != width:
            raise ShapeError(
                f"GRKAN projection expects {self.grkan.projection.in_dim} signature terms, "
                f"level {self.sig_level} on {d_in} channels gives {width}")

    @staticmethod
    def sig_width(d_in: int, level: int, time_channel: bool = False) -> int:
        return sig_dim(d_in + int(time_channel), level)
        if self.grkan.d_model != self.transform.out_dim:
            raise ShapeError(
                f"GRKAN width {self.grkan.d_model} differs from layer units {self.transform.out_dim}")

    @property
    def d_in(self) -> int:
        return self.scale.shape[0]

    @property
    def d_out(self) -> int:
        return self.transform.out_dim

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, *, sig_level: int = 2,
             variant: str = "sigkan", grid: Grid | None = None, epsilon: float = 1e-5,
             basepoint: bool = False, time_channel: bool = False) -> "SigKanLayerParams":
        grkan = GrkanParams.init(cls.sig_width(d_in, sig_level, time_channel), d_out, rng,
                                 variant=variant, grid=grid, epsilon=epsilon)
        if variant == "sigkan":
            transform = KanLinearParams.init(d_in, d_out, rng, grid=grid)
        else:
            transform = DenseParams.init(d_in, d_out, rng)
        return cls(param(np.ones(d_in)), sig_level, grkan, transform, basepoint, time_channel)


# ---------------------------------------------------------------------------
# Forward operations
# ---------------------------------------------------------------------------


def learnable_scale(x, w) -> Tensor:
    """Scale each input channel of ``(..., seq, d_in)`` by its own coefficient."""
    x, w = T.as_tensor(x), T.as_tensor(w)
    if w.ndim != 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"learnable_scale: {w.shape} coefficients for input of shape {x.shape}")
    return x * w


def grkan_forward(s, p: GrkanParams) -> Tensor:
    """Gated residual block on signature features ``(..., sig_dim)``."""
    s = T.as_tensor(s)
    if s.shape[-1] != p.projection.in_dim:
        raise ShapeError(
            f"grkan_forward: expected {p.projection.in_dim} signature terms, got shape {s.shape}")
    x = dense_forward(s, p.projection)
    eta2 = apply_sublayer(x, p.eta2)
    eta1 = apply_sublayer(eta2, p.eta1)
    return layer_norm(x + glu(eta1, p.glu), p.ln_gain, p.ln_bias, p.epsilon)


def sigkan_layer_forward(x, p: SigKanLayerParams) -> Tensor:
    """``(batch, seq, d_in) -> (batch, seq, d_out)``; an unbatched ``(seq, d_in)`` also works."""
    x = T.as_tensor(x)
    unbatched = x.ndim == 2
    if unbatched:
        x = T.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[-1] != p.d_in:
        raise ShapeError(f"sigkan_layer_forward: expected (batch, seq, {p.d_in}), got {x.shape}")
    batch, seq, _ = x.shape
    if seq < 2:
        log.warning("sequence of length %d has a zero signature", seq)
    scaled = learnable_scale(x, p.scale)
    path = scaled
    if p.basepoint or p.time_channel:
        path = augment_path(scaled, basepoint=p.basepoint, time=p.time_channel)
    with np.errstate(over="ignore", invalid="ignore"):
        sig = signature(path, p.sig_level)
    bad = ~np.isfinite(sig.data).all(axis=1)
    if bad.any():
        raise NumericalError(f"non-finite signature for window(s) {np.flatnonzero(bad).tolist()}")
    weights = T.softmax(grkan_forward(sig, p.grkan))
    for watcher in _WEIGHT_WATCHERS:
        watcher.append(weights.data.copy())
    out = T.reshape(weights, (batch, 1, p.d_out)) * apply_sublayer(scaled, p.transform)
    return T.reshape(out, (seq, p.d_out)) if unbatched else out


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


@dataclass
class NetworkConfig:
    d_in: int
    seq_len: int
    n_ahead: int = 1
    variant: str = "sigkan"
    units: int = 100
    n_layers: int = 1
    sig_level: int = 2
    grid_size: int = 5
    spline_degree: int = 3
    grid_lo: float = -1.0
    grid_hi: float = 1.0
    hidden: int = 100
    ln_epsilon: float = 1e-5
    sig_basepoint: bool = False
    sig_time: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("d_in", "seq_len", "n_ahead", "units", "n_layers", "sig_level", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def grid(self) -> Grid:
        return Grid(self.grid_size, self.spline_degree, self.grid_lo, self.grid_hi)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class SigKanNetwork:
    config: NetworkConfig
    layers: list[SigKanLayerParams]
    head_hidden: DenseParams
    head_out: DenseParams
    kind: str = field(init=False)

    def __post_init__(self):
        self.kind = self.config.variant
        dims = [self.config.d_in] + [layer.d_out for layer in self.layers]
        for j, layer in enumerate(self.layers):
            if layer.d_in != dims[j]:
                raise ShapeError(f"layer {j} expects {layer.d_in} inputs, previous gives {dims[j]}")

    @classmethod
    def init(cls, config: NetworkConfig, seed: int = 0) -> "SigKanNetwork":
        rng = np.random.default_rng(seed)
        layers = []
        d = config.d_in
        for _ in range(config.n_layers):
            layers.append(SigKanLayerParams.init(d, config.units, rng, sig_level=config.sig_level,
                                                 variant=config.variant, grid=config.grid,
                                                 epsilon=config.ln_epsilon,
                                                 basepoint=config.sig_basepoint,
                                                 time_channel=config.sig_time))
            d = config.units
        head_hidden = DenseParams.init(config.seq_len * d, config.hidden, rng, activation="relu")
        head_out = DenseParams.init(config.hidden, config.n_ahead, rng)
        return cls(config, layers, head_hidden, head_out)

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(named_parameters({"layers": self.layers, "head_hidden": self.head_hidden,
                                       "head_out": self.head_out}))

    def forward(self, x) -> Tensor:
        return network_forward(x, self)

    def predict(self, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        outs = [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)


def network_forward(x, net: SigKanNetwork) -> Tensor:
    """``(batch, seq, d_in) -> (batch, n_ahead)``; unbatched input gives ``(n_ahead,)``."""
    h = T.as_tensor(x)
    unbatched = h.ndim == 2
    if unbatched:
        h = T.reshape(h, (1,) + h.shape)
    cfg = net.config
    if h.ndim != 3 or h.shape[1:] != (cfg.seq_len, cfg.d_in):
        raise ShapeError(
            f"network_forward: expected (batch, {cfg.seq_len}, {cfg.d_in}), got {h.shape}")
    for layer in net.layers:
        h = sigkan_layer_forward(h, layer)
    y = dense_forward(dense_forward(T.flatten(h), net.head_hidden), net.head_out)
    return T.reshape(y, (cfg.n_ahead,)) if unbatched else y
