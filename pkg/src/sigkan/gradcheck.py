"""Finite-difference checks for every parameterised operation on miniature shapes."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .baselines import MlpConfig, MlpNetwork
from .kan import KanLinearParams, kan_linear_forward
from .model import (
    GrkanParams,
    NetworkConfig,
    SigKanLayerParams,
    SigKanNetwork,
    grkan_forward,
    learnable_scale,
    sigkan_layer_forward,
)
from .nn import GluParams, glu, layer_norm, named_parameters, param
from .signature import signature
from .tensor import Tensor

DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradCase:
    name: str
    max_error: float
    worst_param: str
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:22s} max_rel_err={self.max_error:.3e} "
                f"({self.worst_param}) tol={self.tolerance:.0e}")


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    return T.sum_(out * w)


def _cases(rng: np.random.Generator) -> dict[str, Callable[[], tuple]]:
    def inputs(*shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)

    def kan():
        p = KanLinearParams.init(3, 4, rng)
        x = inputs(5, 3, lo=-0.95, hi=0.95)
        w = rng.normal(size=(5, 4))
        return lambda: _weighted_sum(kan_linear_forward(x, p), w), {"x": x, **p.parameters()}

    def glu_case():
        p = GluParams.init(4, rng)
        p.b4.data, p.b5.data = rng.normal(size=4), rng.normal(size=4)
        x = inputs(3, 4)
        w = rng.normal(size=(3, 4))
        return lambda: _weighted_sum(glu(x, p), w), {"x": x, **dict(named_parameters(p))}

    def layer_norm_case():
        x = inputs(3, 5)
        gain, bias = param(rng.normal(size=5)), param(rng.normal(size=5))
        w = rng.normal(size=(3, 5))
        return (lambda: _weighted_sum(layer_norm(x, gain, bias), w),
                {"x": x, "gain": gain, "bias": bias})

    def grkan(variant):
        def build():
            p = GrkanParams.init(5, 3, rng, variant=variant)
            p.glu.b4.data = rng.normal(size=3)
            s = inputs(2, 5)
            w = rng.normal(size=(2, 3))
            return lambda: _weighted_sum(grkan_forward(s, p), w), {"s": s, **dict(named_parameters(p))}
        return build

    def scaled_signature():
        x = inputs(3, 6, 2)
        scale = param(rng.uniform(0.5, 1.5, size=2))
        w = rng.normal(size=(3, 6))
        return (lambda: _weighted_sum(signature(learnable_scale(x, scale), 2), w),
                {"x": x, "scale": scale})

    def layer(variant):
        def build():
            p = SigKanLayerParams.init(2, 3, rng, variant=variant)
            p.scale.data = rng.uniform(0.5, 1.5, size=2)
            x = inputs(2, 5, 2)
            w = rng.normal(size=(2, 5, 3))
            return (lambda: _weighted_sum(sigkan_layer_forward(x, p), w),
                    {"x": x, **dict(named_parameters(p))})
        return build

    def network(variant):
        def build():
            net = SigKanNetwork.init(NetworkConfig(d_in=2, seq_len=5, units=3, hidden=4,
                                                   variant=variant), seed=int(rng.integers(1 << 30)))
            x = rng.uniform(-1, 1, size=(3, 5, 2))
            y = rng.normal(size=(3, 1))
            return lambda: T.mean(T.square(net.forward(x) - y)), net.named_parameters()
        return build

    def mlp():
        net = MlpNetwork.init(MlpConfig(d_in=2, seq_len=4, hidden=5, n_ahead=2),
                              seed=int(rng.integers(1 << 30)))
        x = rng.uniform(-1, 1, size=(3, 4, 2))
        y = rng.normal(size=(3, 2))
        return lambda: T.mean(T.square(net.forward(x) - y)), net.named_parameters()

    return {
        "kan_layer": kan,
        "glu": glu_case,
        "layer_norm": layer_norm_case,
        "grkan": grkan("sigkan"),
        "grn_dense": grkan("sigdense"),
        "scaled_signature": scaled_signature,
        "sigkan_layer": layer("sigkan"),
        "sigdense_layer": layer("sigdense"),
        "sigkan_network": network("sigkan"),
        "sigdense_network": network("sigdense"),
        "mlp": mlp,
    }


def run_gradchecks(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> list[GradCase]:
    rng = np.random.default_rng(seed)
    results = []
    for name, build in _cases(rng).items():
        t0 = time.perf_counter()
        f, params = build()
        report = T.gradient_check(f, params, tolerance=tolerance)
        worst = max(report.errors, key=report.errors.get)
        results.append(GradCase(name, report.max_error, worst, tolerance,
                                time.perf_counter() - t0))
    return results
