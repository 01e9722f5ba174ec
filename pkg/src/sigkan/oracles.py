"""Reference computations that share no code with :mod:`sigkan.signature`.

They are slow and exist only to check the fast path.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from math import factorial

import numpy as np


def integrate_signature(path, level: int, substeps: int = 2000) -> np.ndarray:
    """Nested trapezoidal quadrature of the iterated integrals.

    Each segment is subdivided into ``substeps`` pieces and level ``k`` is
    obtained by integrating level ``k-1`` against ``dX^j`` with the
    trapezoidal rule.  Returns the flat level-ordered coefficients.
    """
    pts = np.asarray(path, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    dim = pts.shape[1]
    if len(pts) < 2:
        return np.zeros(sum(dim ** k for k in range(1, level + 1)))
    s = np.linspace(0.0, 1.0, substeps + 1)[:-1]
    fine = [a + s[:, None] * (b - a) for a, b in zip(pts[:-1], pts[1:])]
    fine = np.vstack(fine + [pts[-1:]])
    dX = np.diff(fine, axis=0)
    prev = np.ones((len(fine), 1))  # level 0 along the path
    out = []
    for _ in range(level):
        avg = 0.5 * (prev[:-1] + prev[1:])
        incr = (avg[:, :, None] * dX[:, None, :]).reshape(len(dX), -1)
        cur = np.vstack([np.zeros((1, incr.shape[1])), np.cumsum(incr, axis=0)])
        out.append(cur[-1])
        prev = cur
    return np.concatenate(out)


def recursive_signature(path, level: int) -> np.ndarray:
    """Word-by-word recursion over segments in plain Python floats.

    ``S^w(up to segment s) = sum_r S^{w[:r]}(up to s-1) * prod(delta_s[w[r:]]) / (len(w)-r)!``
    """
    pts = [tuple(float(v) for v in np.atleast_1d(p)) for p in np.asarray(path, dtype=np.float64)]
    dim = len(pts[0])
    deltas = [tuple(b[i] - a[i] for i in range(dim)) for a, b in zip(pts[:-1], pts[1:])]

    @lru_cache(maxsize=None)
    def sig(word: tuple[int, ...], s: int) -> float:
        if not word:
            return 1.0
        if s == 0:
            return 0.0
        d = deltas[s - 1]
        total = 0.0
        n = len(word)
        for r in range(n + 1):
            tail = 1.0
            for letter in word[r:]:
                tail *= d[letter]
            total += sig(word[:r], s - 1) * tail / factorial(n - r)
        return total

    out = []
    for k in range(1, level + 1):
        for word in itertools.product(range(dim), repeat=k):
            out.append(sig(word, len(deltas)))
    return np.array(out)


def level2_iterated_sums(path) -> np.ndarray:
    """Level-2 block via ``sum_{s<t} d_s^i d_t^j + sum_s d_s^i d_s^j / 2``."""
    d = np.diff(np.asarray(path, dtype=np.float64), axis=0)
    dim = d.shape[1]
    out = np.zeros((dim, dim))
    for t in range(len(d)):
        for s in range(t):
            out += np.outer(d[s], d[t])
        out += np.outer(d[t], d[t]) / 2.0
    return out.reshape(-1)
