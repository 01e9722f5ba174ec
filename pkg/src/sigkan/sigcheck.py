"""Randomised property suite for the signature kernels (the ``sigcheck`` command)."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from math import factorial

import numpy as np

from .oracles import integrate_signature, recursive_signature
from .tensor import relative_error
from .signature import chen_product, level_offsets, path_signature, path_signature_backward

EXACT_TOL = 1e-12
INTEGRATION_TOL = 1e-3
GRADIENT_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float
    trials: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.worst < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:24s} worst={self.worst:.3e} tol={self.tolerance:.0e} "
                f"trials={self.trials} time={self.seconds:.2f}s")


def scaled_error(a, b) -> float:
    """Max abs difference relative to ``max(1, |b|)`` elementwise."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if a.size else 0.0


def level_relative_error(a, b, dim: int, level: int) -> float:
    """Worst per-level ``|a - b|_inf / |b|_inf``, floored at 1e-12 in the denominator."""
    off = level_offsets(dim, level)
    worst = 0.0
    for k in range(level):
        da, db = a[off[k]:off[k + 1]], b[off[k]:off[k + 1]]
        worst = max(worst, float(np.max(np.abs(da - db)) / max(np.max(np.abs(db)), 1e-12)))
    return worst


def random_path(rng: np.random.Generator, dim: int, max_len: int = 6) -> np.ndarray:
    length = int(rng.integers(2, max_len + 1))
    return rng.uniform(-1.0, 1.0, size=(length, dim))


def _fd_gradient(path: np.ndarray, level: int, upstream: np.ndarray, h: float = 1e-5):
    g = np.zeros_like(path)
    for idx in np.ndindex(path.shape):
        p, m = path.copy(), path.copy()
        p[idx] += h
        m[idx] -= h
        g[idx] = (path_signature(p, level).coeffs @ upstream
                  - path_signature(m, level).coeffs @ upstream) / (2 * h)
    return g


def run_suite(level: int = 2, dim: int = 2, trials: int = 100, seed: int = 0,
              integration_trials: int | None = None) -> list[CheckResult]:
    """Run every property on ``trials`` random paths with ``dim`` channels.

    The quadrature oracle is the slow one; ``integration_trials`` caps it
    separately (default: ``trials``).
    """
    rng = np.random.default_rng(seed)
    results = []

    def timed(name, tol, n, fn):
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(n):
            worst = max(worst, fn())
        results.append(CheckResult(name, worst, tol, n, time.perf_counter() - t0))

    def integration():
        p = random_path(rng, dim)
        return level_relative_error(path_signature(p, level).coeffs,
                                    integrate_signature(p, level), dim, level)

    def recursion():
        p = random_path(rng, dim)
        return scaled_error(path_signature(p, level).coeffs, recursive_signature(p, level))

    def chen():
        p = random_path(rng, dim)
        q = np.vstack([p[-1:], random_path(rng, dim)])
        whole = path_signature(np.vstack([p, q[1:]]), level).coeffs
        glued = chen_product(path_signature(p, level), path_signature(q, level)).coeffs
        return scaled_error(glued, whole)

    def shuffle():
        s = path_signature(random_path(rng, dim), max(level, 2))
        worst = 0.0
        for i, j in itertools.product(range(dim), repeat=2):
            worst = max(worst, scaled_error(s[(i,)] * s[(j,)], s[(i, j)] + s[(j, i)]))
        return worst

    def closed_form():
        a, b = rng.uniform(-1, 1, size=(2, dim))
        steps = int(rng.integers(1, 5))
        line = a + np.linspace(0, 1, steps + 1)[:, None] * (b - a)
        s = path_signature(line, level)
        delta = b - a
        worst = 0.0
        for k in range(1, level + 1):
            for word in itertools.product(range(dim), repeat=k):
                expected = np.prod(delta[list(word)]) / factorial(k)
                worst = max(worst, scaled_error(s[word], expected))
        return worst

    def insertion():
        p = random_path(rng, dim)
        seg = int(rng.integers(0, len(p) - 1))
        lam = rng.uniform(0.05, 0.95)
        mid = p[seg] + lam * (p[seg + 1] - p[seg])
        q = np.insert(p, seg + 1, mid, axis=0)
        return scaled_error(path_signature(q, level).coeffs, path_signature(p, level).coeffs)

    def gradient():
        p = random_path(rng, dim)
        u = rng.normal(size=path_signature(p, level).coeffs.size)
        analytic = path_signature_backward(p, level, u)
        numeric = _fd_gradient(p, level, u)
        return relative_error(analytic, numeric)

    n_int = trials if integration_trials is None else integration_trials
    timed("integration_oracle", INTEGRATION_TOL, n_int, integration)
    timed("recursive_oracle", EXACT_TOL, trials, recursion)
    timed("chen_identity", EXACT_TOL, trials, chen)
    if level >= 2:
        timed("shuffle_level2", EXACT_TOL, trials, shuffle)
    timed("linear_closed_form", EXACT_TOL, trials, closed_form)
    timed("collinear_insertion", EXACT_TOL, trials, insertion)
    timed("gradient_fd", GRADIENT_TOL, trials, gradient)
    return results
