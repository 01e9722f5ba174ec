"""Signature-weighted Kolmogorov-Arnold networks for time-series forecasting.

Everything runs on float64 numpy through a small reverse-mode autodiff core
(:mod:`sigkan.tensor`).
"""

__version__ = "0.1.0"
