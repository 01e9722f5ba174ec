"""Seeded synthetic series standing in for exchange data."""

from __future__ import annotations

import numpy as np

from .data import RawSeries

HOUR = 3600.0
START = 1577836800.0  # 2020-01-01T00:00:00Z


def hourly_volumes(n: int = 5000, n_assets: int = 3, seed: int = 0, *, phi: float = 0.7,
                   sigma: float = 0.2, amplitude: float = 0.5,
                   common: float = 0.6) -> RawSeries:
    """Multiplicative daily seasonality times exp(AR(1)) noise, one column per asset.

    Innovations share a common factor with weight ``common`` so the assets
    co-move.  The first column (``asset0``) is the target.
    """
    rng = np.random.default_rng(seed)
    hours = np.arange(n)
    phase = rng.uniform(0, 2 * np.pi)
    season = 1.0 + amplitude * np.sin(2 * np.pi * hours / 24.0 + phase)
    shared = rng.normal(size=n)
    own = rng.normal(size=(n, n_assets))
    eps = np.sqrt(common) * shared[:, None] + np.sqrt(1.0 - common) * own
    z = np.zeros((n, n_assets))
    for t in range(1, n):
        z[t] = phi * z[t - 1] + sigma * eps[t]
    level = rng.uniform(1e3, 1e5, size=n_assets)
    values = level * season[:, None] * np.exp(z)
    names = [f"asset{i}" for i in range(n_assets)]
    return RawSeries(START + HOUR * hours, names, values, names[0])


def hourly_closes(n: int = 5000, seed: int = 0, *, omega: float = 1e-6, alpha: float = 0.08,
                  beta: float = 0.9) -> RawSeries:
    """GARCH(1,1) log-returns compounded into a positive close series."""
    rng = np.random.default_rng(seed)
    var = omega / (1.0 - alpha - beta)
    r = np.zeros(n)
    for t in range(1, n):
        var = omega + alpha * r[t - 1] ** 2 + beta * var
        r[t] = np.sqrt(var) * rng.normal()
    closes = 100.0 * np.exp(np.cumsum(r))
    return RawSeries(START + HOUR * np.arange(n), ["close"], closes[:, None], "close")
