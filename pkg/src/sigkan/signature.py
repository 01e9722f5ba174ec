"""Truncated signatures of piecewise-linear paths.

A discrete sequence of points is read as the piecewise-linear path through
them.  Each linear segment has the closed-form signature
``exp(delta) = (1, delta, delta^2/2!, ..., delta^m/m!)`` and segments are
glued together with Chen's product.  Coefficients are stored flat, level by
level, each level in lexicographic order of its multi-index; the level-0
constant 1 is implicit.

All kernels are batched over a leading axis so that a whole minibatch of
windows is processed with one pass over the segments.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .tensor import Tensor, as_tensor, concatenate, make_op


def sig_dim(dim: int, level: int) -> int:
    """Number of stored coefficients, ``dim + dim**2 + ... + dim**level``."""
    if dim < 1 or level < 1:
        raise ValueError(f"sig_dim needs dim >= 1 and level >= 1, got dim={dim}, level={level}")
    return sum(dim ** k for k in range(1, level + 1))


def level_offsets(dim: int, level: int) -> list[int]:
    """Start offset of each level block in the flat layout, plus the end."""
    offsets = [0]
    for k in range(1, level + 1):
        offsets.append(offsets[-1] + dim ** k)
    return offsets


@dataclass
class TruncatedSignature:
    dim: int
    level: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        expected = sig_dim(self.dim, self.level)
        if self.coeffs.shape != (expected,):
            raise ValueError(
                f"signature of dim={self.dim}, level={self.level} needs {expected} "
                f"coefficients, got shape {self.coeffs.shape}")

    @classmethod
    def zero(cls, dim: int, level: int) -> "TruncatedSignature":
        return cls(dim, level, np.zeros(sig_dim(dim, level)))

    def block(self, k: int) -> np.ndarray:
        """Level-``k`` coefficients as a ``(dim,)*k`` array."""
        off = level_offsets(self.dim, self.level)
        return self.coeffs[off[k - 1]:off[k]].reshape((self.dim,) * k)

    def __getitem__(self, word) -> float:
        """Coefficient for a multi-index of 0-based letters."""
        word = tuple(word)
        if not word:
            return 1.0
        return float(self.block(len(word))[word])


# ---------------------------------------------------------------------------
# Batched level-list kernels.  A "levels" value is a list ``[S_1, ..., S_m]``
# with ``S_k`` of shape ``(batch, dim**k)``.
# ---------------------------------------------------------------------------


def _split(flat: np.ndarray, dim: int, level: int) -> list[np.ndarray]:
    off = level_offsets(dim, level)
    return [flat[..., off[k - 1]:off[k]] for k in range(1, level + 1)]


def _join(levels: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(levels, axis=-1)


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


def _tensor_exp(delta: np.ndarray, level: int) -> list[np.ndarray]:
    out = [delta]
    for k in range(2, level + 1):
        out.append(_outer(out[-1], delta) / k)
    return out


def _chen(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    m = len(a)
    out = []
    for k in range(1, m + 1):
        c = a[k - 1] + b[k - 1]
        for i in range(1, k):
            c = c + _outer(a[i - 1], b[k - i - 1])
        out.append(c)
    return out


def _chen_backward(a, b, gc):
    """Gradients of ``_chen(a, b)`` w.r.t. both operands given ``gc``."""
    m = len(a)
    batch = a[0].shape[0]
    ga = [g.copy() for g in gc]
    gb = [g.copy() for g in gc]
    for k in range(2, m + 1):
        for i in range(1, k):
            j = k - i
            g = gc[k - 1].reshape(batch, a[i - 1].shape[1], b[j - 1].shape[1])
            ga[i - 1] += np.einsum("bij,bj->bi", g, b[j - 1])
            gb[j - 1] += np.einsum("bij,bi->bj", g, a[i - 1])
    return ga, gb


def _tensor_exp_backward(delta: np.ndarray, level: int, gexp: list[np.ndarray]) -> np.ndarray:
    """Gradient of ``<gexp, exp(delta)>`` w.r.t. ``delta``."""
    batch, dim = delta.shape
    powers = [np.ones((batch, 1)), delta]
    for _ in range(2, level):
        powers.append(_outer(powers[-1], delta))
    grad = gexp[0].copy()
    for k in range(2, level + 1):
        g = gexp[k - 1]
        acc = np.zeros_like(delta)
        for p in range(k):
            left, right = powers[p], powers[k - 1 - p]
            gk = g.reshape(batch, left.shape[1], dim, right.shape[1])
            acc += np.einsum("bl,bldr,br->bd", left, gk, right)
        grad += acc / factorial(k)
    return grad


def batch_signature(paths: np.ndarray, level: int, *, keep_prefixes: bool = False):
    """Signatures of a batch of paths with shape ``(batch, length, dim)``.

    Returns the flat coefficients ``(batch, sig_dim)``; with
    ``keep_prefixes`` also the list of running level-lists, needed by the
    backward pass.
    """
    paths = np.asarray(paths, dtype=np.float64)
    if paths.ndim != 3:
        raise ValueError(f"expected paths of shape (batch, length, dim), got {paths.shape}")
    batch, length, dim = paths.shape
    if length < 1:
        raise ValueError("a path needs at least one point")
    deltas = np.diff(paths, axis=1)
    running = [np.zeros((batch, dim ** k)) for k in range(1, level + 1)]
    prefixes = [running]
    for s in range(length - 1):
        running = _chen(running, _tensor_exp(deltas[:, s], level))
        if keep_prefixes:
            prefixes.append(running)
    flat = _join(running)
    if keep_prefixes:
        return flat, prefixes
    return flat


def batch_signature_backward(paths: np.ndarray, level: int, upstream: np.ndarray,
                             prefixes=None) -> np.ndarray:
    """Gradient w.r.t. every path point of ``sum(upstream * signature)``."""
    paths = np.asarray(paths, dtype=np.float64)
    batch, length, dim = paths.shape
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (batch, sig_dim(dim, level)):
        raise ValueError(
            f"upstream gradient must have shape {(batch, sig_dim(dim, level))}, "
            f"got {upstream.shape}")
    if prefixes is None:
        _, prefixes = batch_signature(paths, level, keep_prefixes=True)
    deltas = np.diff(paths, axis=1)
    grad_points = np.zeros_like(paths)
    g_run = _split(upstream, dim, level)
    for s in range(length - 2, -1, -1):
        seg = _tensor_exp(deltas[:, s], level)
        g_run, g_seg = _chen_backward(prefixes[s], seg, g_run)
        g_delta = _tensor_exp_backward(deltas[:, s], level, g_seg)
        grad_points[:, s + 1] += g_delta
        grad_points[:, s] -= g_delta
    return grad_points


# ---------------------------------------------------------------------------
# Single-path API
# ---------------------------------------------------------------------------


def segment_signature(increment, level: int) -> TruncatedSignature:
    delta = np.asarray(increment, dtype=np.float64).reshape(1, -1)
    return TruncatedSignature(delta.shape[1], level, _join(_tensor_exp(delta, level))[0])


def chen_product(a: TruncatedSignature, b: TruncatedSignature) -> TruncatedSignature:
    """Signature of the concatenation of the paths behind ``a`` then ``b``."""
    if a.dim != b.dim or a.level != b.level:
        raise ValueError(
            f"chen_product needs matching dim/level, got ({a.dim}, {a.level}) "
            f"and ({b.dim}, {b.level})")
    la = _split(a.coeffs[None, :], a.dim, a.level)
    lb = _split(b.coeffs[None, :], b.dim, b.level)
    return TruncatedSignature(a.dim, a.level, _join(_chen(la, lb))[0])


def _as_path(path) -> np.ndarray:
    try:
        arr = np.asarray(path, dtype=np.float64)
    except ValueError:
        raise ValueError("path points have inconsistent dimensions") from None
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError(f"path must be a (length, dim) array with length >= 1, got {arr.shape}")
    return arr


def path_signature(path, level: int = 2) -> TruncatedSignature:
    arr = _as_path(path)
    return TruncatedSignature(arr.shape[1], level, batch_signature(arr[None], level)[0])


def path_signature_backward(path, level: int, upstream) -> np.ndarray:
    arr = _as_path(path)
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    expected = sig_dim(arr.shape[1], level)
    if upstream.size != expected:
        raise ValueError(f"upstream gradient has length {upstream.size}, expected {expected}")
    return batch_signature_backward(arr[None], level, upstream[None])[0]


# ---------------------------------------------------------------------------
# Tape primitive
# ---------------------------------------------------------------------------


def augment_path(x, *, basepoint: bool = False, time: bool = False) -> Tensor:
    """Optional preprocessing of ``(batch, length, dim)`` paths before the signature.

    ``basepoint`` prepends a zero point so the signature also sees the
    starting level; ``time`` appends a channel running from 0 to 1.
    """
    x = as_tensor(x)
    batch, length, _ = x.shape
    if time:
        clock = np.broadcast_to(np.linspace(0.0, 1.0, length)[None, :, None], (batch, length, 1))
        x = concatenate([x, Tensor(clock)], axis=2)
    if basepoint:
        x = concatenate([Tensor(np.zeros((batch, 1, x.shape[2]))), x], axis=1)
    return x


def signature(x: Tensor, level: int) -> Tensor:
    """Differentiable signature of ``x`` with shape ``(batch, length, dim)``."""
    data = x.data
    if x.requires_grad:
        flat, prefixes = batch_signature(data, level, keep_prefixes=True)
    else:
        flat, prefixes = batch_signature(data, level), None

    def bw(g):
        return (batch_signature_backward(data, level, g, prefixes),)

    return make_op(flat, (x,), bw, "signature")
