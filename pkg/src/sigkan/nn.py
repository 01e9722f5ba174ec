"""Small building blocks shared by the models: dense layers, GLU, layer norm."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk nested parameter dataclasses/lists, yielding trainable leaves in a fixed order."""
    if isinstance(obj, Tensor):
        if obj.requires_grad:
            yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_parameters(getattr(obj, f.name), name)
    elif isinstance(obj, dict):
        for key, item in obj.items():
            name = f"{prefix}.{key}" if prefix else str(key)
            yield from named_parameters(item, name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            name = f"{prefix}.{i}" if prefix else str(i)
            yield from named_parameters(item, name)


def param(array) -> Tensor:
    return Tensor(np.array(array, dtype=np.float64), requires_grad=True)


@dataclass
class DenseParams:
    """``activation(x @ W.T + b)``; ``W`` is ``(out_dim, in_dim)``."""

    weight: Tensor
    bias: Tensor
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
             activation: str = "identity") -> "DenseParams":
        # Glorot-uniform, zero bias
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(param(rng.uniform(-bound, bound, size=(out_dim, in_dim))),
                   param(np.zeros(out_dim)), activation)


def dense_forward(x, p: DenseParams) -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != p.in_dim:
        raise ShapeError(f"dense: expected last extent {p.in_dim}, got shape {x.shape}")
    lead = x.shape[:-1]
    flat = T.reshape(x, (-1, p.in_dim))
    out = flat @ T.transpose(p.weight) + p.bias
    out = T.ACTIVATIONS[p.activation](out)
    return T.reshape(out, lead + (p.out_dim,))


@dataclass
class GluParams:
    W4: Tensor
    W5: Tensor
    b4: Tensor
    b5: Tensor

    def __post_init__(self):
        d = self.W4.shape[0]
        for name in ("W4", "W5"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"GLU {name} must be square ({d}, {d}), got {getattr(self, name).shape}")
        for name in ("b4", "b5"):
            if getattr(self, name).shape != (d,):
                raise ShapeError(f"GLU {name} must have shape ({d},), got {getattr(self, name).shape}")

    @property
    def d_model(self) -> int:
        return self.W4.shape[0]

    @classmethod
    def init(cls, d_model: int, rng: np.random.Generator) -> "GluParams":
        bound = np.sqrt(6.0 / (2 * d_model))
        return cls(param(rng.uniform(-bound, bound, size=(d_model, d_model))),
                   param(rng.uniform(-bound, bound, size=(d_model, d_model))),
                   param(np.zeros(d_model)), param(np.zeros(d_model)))


def glu(gamma, p: GluParams) -> Tensor:
    """``sigmoid(W4 g + b4) * (W5 g + b5)`` along the last axis."""
    gamma = T.as_tensor(gamma)
    if gamma.shape[-1] != p.d_model:
        raise ShapeError(f"glu: expected last extent {p.d_model}, got shape {gamma.shape}")
    squeeze = gamma.ndim == 1
    g2 = T.reshape(gamma, (1, -1)) if squeeze else gamma
    gate = T.sigmoid(g2 @ T.transpose(p.W4) + p.b4)
    value = g2 @ T.transpose(p.W5) + p.b5
    out = gate * value
    return T.reshape(out, (p.d_model,)) if squeeze else out


def layer_norm(x, gain, bias, epsilon: float = 1e-5) -> Tensor:
    """Normalise over the last (feature) axis, then scale and shift."""
    x = T.as_tensor(x)
    mu = T.mean(x, axis=-1, keepdims=True)
    v = T.var(x, axis=-1, keepdims=True)
    return (x - mu) / T.sqrt(v + epsilon) * gain + bias
