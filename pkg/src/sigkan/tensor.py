"""Dense float64 tensors with a define-by-run reverse-mode tape.

Every operation returns a new :class:`Tensor` that remembers its parents and
a backward rule.  Calling :func:`backward` on a scalar result builds a
:class:`Tape` (the topologically ordered list of recorded operations) and
walks it once in reverse, leaving ``d(loss)/d(leaf)`` in ``leaf.grad``.

Broadcasting follows numpy semantics, i.e. extents must be equal or 1
(missing leading axes count as 1).  Anything else is a :class:`ShapeError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=DTYPE)
    return arr


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: Sequence["Tensor"] = (), backward_fn=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward_fn

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable,
            op: str) -> Tensor:
    """Record a primitive.

    ``backward_fn(g)`` receives the upstream gradient (same shape as ``data``)
    and returns one gradient (or ``None``) per parent, in order.  Custom
    primitives elsewhere in the package are built through this hook.
    """
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, op=op,
                  parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None)


# ---------------------------------------------------------------------------
# Tape and backward pass
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Operations reachable from an output, in topological order."""

    ops: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.ops if t.is_leaf and t.requires_grad]

    def run_backward(self, output: Tensor, seed: np.ndarray) -> None:
        for leaf in self.leaves():
            leaf.zero_grad()
        grads: dict[int, np.ndarray] = {id(output): seed}
        for node in reversed(self.ops):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(
                        f"{node.op}: backward produced gradient of shape {pg.shape} "
                        f"for input of shape {parent.shape}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every leaf that requires grad.

    Accumulators are reset before the pass, so calling this twice gives the
    same gradients rather than their sum.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = Tape.record(loss)
    tape.run_backward(loss, np.ones_like(loss.data))
    return tape


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# Elementwise binary ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    """Hadamard (elementwise) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return make_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return make_op(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_op(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# Elementwise unary ops
# ---------------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out = x.data * s
    return make_op(out, (x,), lambda g: (g * (s + out * (1.0 - s)),), "silu")


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    neg_part = alpha * np.expm1(np.minimum(x.data, 0.0))
    pos = x.data > 0
    out = np.where(pos, x.data, neg_part)
    return make_op(out, (x,), lambda g: (g * np.where(pos, 1.0, neg_part + alpha),), "elu")


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_op(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def identity(x) -> Tensor:
    return as_tensor(x)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_op(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    return make_op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return make_op(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def square(x) -> Tensor:
    x = as_tensor(x)
    return make_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_op(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "silu": silu,
    "elu": elu,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "identity": identity,
}


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax over the last axis (the only axis the model needs)."""
    x = as_tensor(x)
    if axis not in (-1, x.ndim - 1):
        raise ShapeError(f"softmax: only the last axis is supported, got axis={axis}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_op(s, (x,), bw, "softmax")


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_back(g: np.ndarray, axes: tuple[int, ...], keepdims: bool) -> np.ndarray:
    if keepdims:
        return g
    for a in sorted(axes):
        g = np.expand_dims(g, a)
    return g


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    return make_op(out, (x,),
                   lambda g: (np.broadcast_to(_expand_back(g, axes, keepdims), x.shape).copy(),),
                   "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)
    return make_op(out, (x,),
                   lambda g: (np.broadcast_to(_expand_back(g, axes, keepdims) / count,
                                              x.shape).copy(),),
                   "mean")


def var(x, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance (divides by the count, not count - 1)."""
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    centred = x.data - x.data.mean(axis=axes, keepdims=True)
    out = (centred ** 2).mean(axis=axes, keepdims=keepdims)

    def bw(g):
        return (_expand_back(g, axes, keepdims) * (2.0 / count) * centred,)

    return make_op(out, (x,), bw, "var")


# ---------------------------------------------------------------------------
# Structural ops
# ---------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return make_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x, start_axis: int = 1) -> Tensor:
    """Collapse every axis from ``start_axis`` on into one."""
    x = as_tensor(x)
    return reshape(x, x.shape[:start_axis] + (-1,))


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[:-2] + (x.ndim - 1, x.ndim - 2) if x.ndim >= 2 else (0,)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),),
                   "transpose")


def getitem(x, index) -> Tensor:
    """Basic and integer-array indexing (slices, gathers)."""
    x = as_tensor(x)
    out = x.data[index]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return make_op(np.array(out, dtype=DTYPE), (x,), bw, "getitem")


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather rows along ``axis`` by integer index."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    out = np.take(x.data, indices, axis=axis)

    def bw(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return make_op(out, (x,), bw, "take")


def concatenate(xs: Iterable, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concatenate: no inputs")
    ndim = xs[0].ndim
    axis = axis % ndim
    for x in xs[1:]:
        if x.ndim != ndim or any(x.shape[i] != xs[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(
                f"concatenate: shapes {xs[0].shape} and {x.shape} differ off axis {axis}")
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def bw(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis)
                     for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_op(out, tuple(xs), bw, "concatenate")


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Relative error between analytic and FD gradients, one entry per parameter tensor."""

    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self) -> list[str]:
        out = []
        for name, err in self.errors.items():
            status = "ok" if err < self.tolerance else "FAIL"
            out.append(f"{name:40s} {err:.3e} {status}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a|, |n|, 1e-8)`` with Euclidean norms over the whole tensor."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom)


def gradient_check(f: Callable[[], Tensor], params: dict[str, Tensor], *, h: float = 1e-5,
                   tolerance: float = 1e-4, max_entries: int | None = None,
                   rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` is re-evaluated for each perturbed entry, so it must read parameter
    values from the given tensors.  ``max_entries`` subsamples large
    parameters (picked with ``rng``) to bound the cost.
    """
    loss = f()
    backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}
    errors: dict[str, float] = {}
    for name, p in params.items():
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng if rng is not None else np.random.default_rng(0)
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric[j] = (up - down) / (2.0 * h)
        errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric) if idx.size else 0.0
    return GradCheckReport(errors, tolerance)
