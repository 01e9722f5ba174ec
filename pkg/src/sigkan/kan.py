"""B-spline Kolmogorov-Arnold layers.

Each edge ``i -> j`` carries ``phi_ji(x) = base_w[j, i] * act(x) + sum_t c[j, i, t] B_t(x)``
and output node ``j`` sums its incoming edges.  The B-spline basis lives on a
clamped knot vector over ``[lo, hi]`` (end knots repeated ``degree`` extra
times), giving ``grid_size + degree`` basis functions that sum to one on the
whole range.  Inputs outside the range are clamped, so the spline part is
continued as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, make_op

BASE_ACTIVATIONS = ("silu", "elu", "identity")


@dataclass(frozen=True)
class Grid:
    """Clamped uniform knot vector over ``[lo, hi]``."""

    size: int = 5
    degree: int = 3
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"degenerate grid range [{self.lo}, {self.hi}]")
        if self.size < 1 or self.degree < 0:
            raise ValueError(f"grid needs size >= 1 and degree >= 0, got {self.size}, {self.degree}")

    @property
    def n_basis(self) -> int:
        return self.size + self.degree

    @property
    def knots(self) -> np.ndarray:
        inner = np.linspace(self.lo, self.hi, self.size + 1)
        return np.concatenate([np.full(self.degree, self.lo), inner, np.full(self.degree, self.hi)])


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # 0/0 terms of the recursion (repeated knots) are defined as 0
    out = np.zeros(np.broadcast_shapes(num.shape, den.shape))
    nz = np.broadcast_to(den != 0, out.shape)
    np.divide(num, den, out=out, where=nz)
    return out


def _basis_levels(x: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray | None]:
    """Basis of degree ``p`` and ``p - 1`` at clamped ``x``; trailing axis indexes the basis."""
    t = grid.knots
    p = grid.degree
    xc = np.clip(x, grid.lo, grid.hi)[..., None]
    left, right = t[:-1], t[1:]
    b = ((xc >= left) & (xc < right)).astype(np.float64)
    # the right end belongs to the last non-empty interval
    last = len(t) - 2 - p
    at_end = xc[..., 0] >= grid.hi
    b[at_end] = 0.0
    b[at_end, last] = 1.0
    prev = None
    for k in range(1, p + 1):
        prev = b
        w_left = _safe_ratio(xc - t[:-k - 1], t[k:-1] - t[:-k - 1])
        w_right = _safe_ratio(t[k + 1:] - xc, t[k + 1:] - t[1:-k])
        b = w_left * prev[..., :-1] + w_right * prev[..., 1:]
    return b, prev


def bspline_basis_values(x, grid: Grid) -> np.ndarray:
    """Cox-de Boor basis values; output shape ``x.shape + (n_basis,)``."""
    return _basis_levels(np.asarray(x, dtype=np.float64), grid)[0]


def bspline_basis_derivative(x, grid: Grid) -> np.ndarray:
    """d/dx of each basis function (zero outside the clamped range)."""
    x = np.asarray(x, dtype=np.float64)
    p = grid.degree
    if p == 0:
        return np.zeros(x.shape + (grid.n_basis,))
    t = grid.knots
    _, lower = _basis_levels(x, grid)
    n = grid.n_basis
    left = _safe_ratio(np.float64(p), t[p:p + n] - t[:n])
    right = _safe_ratio(np.float64(p), t[p + 1:p + 1 + n] - t[1:n + 1])
    d = left * lower[..., :n] - right * lower[..., 1:n + 1]
    outside = (x < grid.lo) | (x > grid.hi)
    d[outside] = 0.0
    return d


def bspline_basis(x: Tensor, grid: Grid) -> Tensor:
    """Tape primitive: ``(..., n) -> (..., n, n_basis)``."""
    x = T.as_tensor(x)
    values = bspline_basis_values(x.data, grid)

    def bw(g):
        return ((g * bspline_basis_derivative(x.data, grid)).sum(axis=-1),)

    return make_op(values, (x,), bw, "bspline_basis")


@dataclass
class KanLinearParams:
    in_dim: int
    out_dim: int
    grid: Grid
    base_activation: str
    base_weights: Tensor
    spline_coeffs: Tensor

    def __post_init__(self):
        if self.base_activation not in BASE_ACTIVATIONS:
            raise ValueError(f"unknown base activation {self.base_activation!r}")
        want_base = (self.out_dim, self.in_dim)
        want_spline = (self.out_dim, self.in_dim, self.grid.n_basis)
        if self.base_weights.shape != want_base:
            raise ShapeError(f"base_weights must be {want_base}, got {self.base_weights.shape}")
        if self.spline_coeffs.shape != want_spline:
            raise ShapeError(f"spline_coeffs must be {want_spline}, got {self.spline_coeffs.shape}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, *,
             grid: Grid | None = None, base_activation: str = "silu",
             spline_scale: float = 0.1) -> "KanLinearParams":
        grid = grid or Grid()
        bound = 1.0 / np.sqrt(in_dim)
        base = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        coeffs = rng.normal(0.0, spline_scale / np.sqrt(in_dim),
                            size=(out_dim, in_dim, grid.n_basis))
        return cls(in_dim, out_dim, grid, base_activation,
                   Tensor(base, requires_grad=True), Tensor(coeffs, requires_grad=True))

    def parameters(self) -> dict[str, Tensor]:
        return {"base_weights": self.base_weights, "spline_coeffs": self.spline_coeffs}


def kan_linear_forward(x, params: KanLinearParams) -> Tensor:
    """Apply the layer along the last axis; leading axes are batch axes."""
    x = T.as_tensor(x)
    if x.ndim < 1 or x.shape[-1] != params.in_dim:
        raise ShapeError(
            f"kan_linear_forward: expected last extent {params.in_dim}, got shape {x.shape}")
    lead = x.shape[:-1]
    flat = T.reshape(x, (-1, params.in_dim))
    act = T.ACTIVATIONS[params.base_activation](flat)
    base = act @ T.transpose(params.base_weights)
    basis = T.reshape(bspline_basis(flat, params.grid), (flat.shape[0], -1))
    coeffs = T.reshape(params.spline_coeffs, (params.out_dim, -1))
    out = base + basis @ T.transpose(coeffs)
    return T.reshape(out, lead + (params.out_dim,))


def kan_sequence_apply(x, params: KanLinearParams) -> Tensor:
    """Same layer applied to every time step of ``(..., seq, d_in)``."""
    x = T.as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"kan_sequence_apply: expected (seq, d_in) input, got {x.shape}")
    return kan_linear_forward(x, params)
