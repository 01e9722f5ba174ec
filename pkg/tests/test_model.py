import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sigkan import tensor as T
from sigkan.errors import NumericalError
from sigkan.kan import KanLinearParams, kan_sequence_apply
from sigkan.model import (
    GrkanParams,
    NetworkConfig,
    SigKanLayerParams,
    SigKanNetwork,
    grkan_forward,
    learnable_scale,
    sigkan_layer_forward,
    watch_weights,
)
from sigkan.nn import DenseParams, GluParams, dense_forward, glu, layer_norm, named_parameters, param
from sigkan.oracles import recursive_signature
from sigkan.signature import path_signature
from sigkan.tensor import ShapeError, Tensor


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class TestLearnableScale:
    def test_ones_is_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(learnable_scale(x, np.ones(3)).data, x)

    def test_zero_gives_zero_signature(self):
        x = np.random.default_rng(1).normal(size=(5, 2))
        scaled = learnable_scale(x, np.zeros(2)).data
        assert not scaled.any()
        np.testing.assert_array_equal(path_signature(scaled, 2).coeffs, 0.0)

    def test_level1_scales_per_channel(self):
        x = np.random.default_rng(2).normal(size=(6, 2))
        s = path_signature(learnable_scale(x, np.array([2.0, 1.0])).data, 2)
        d = x[-1] - x[0]
        np.testing.assert_allclose(s.block(1), [2 * d[0], d[1]], atol=1e-14)
        np.testing.assert_allclose(s.coeffs, recursive_signature(x * [2.0, 1.0], 2), atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            learnable_scale(np.zeros((4, 3)), np.ones(2))


class TestGlu:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.p = GluParams.init(4, rng)
        self.p.b4.data = rng.normal(size=4)
        self.p.b5.data = rng.normal(size=4)
        self.g = rng.normal(size=4)

    def test_closed_value_branch(self):
        self.p.W5.data[:] = 0.0
        self.p.b5.data[:] = 0.0
        np.testing.assert_array_equal(glu(self.g, self.p).data, 0.0)

    def test_neutral_gate(self):
        self.p.W4.data[:] = 0.0
        self.p.b4.data[:] = 0.0
        value = self.p.W5.data @ self.g + self.p.b5.data
        np.testing.assert_allclose(glu(self.g, self.p).data, 0.5 * value, rtol=1e-15)

    def test_scalar_recomputation(self):
        W4, W5, b4, b5 = (t.data for t in (self.p.W4, self.p.W5, self.p.b4, self.p.b5))
        expected = []
        for i in range(4):
            a = sum(W4[i, j] * self.g[j] for j in range(4)) + b4[i]
            v = sum(W5[i, j] * self.g[j] for j in range(4)) + b5[i]
            expected.append(sigmoid(a) * v)
        np.testing.assert_allclose(glu(self.g, self.p).data, expected, rtol=1e-13)

    def test_rectangular_weight_rejected(self):
        with pytest.raises(ShapeError, match="square"):
            GluParams(param(np.zeros((2, 3))), param(np.zeros((2, 2))),
                      param(np.zeros(2)), param(np.zeros(2)))


class TestLayerNorm:
    def test_constant_vector(self):
        out = layer_norm(np.full(5, 3.0), np.ones(5), np.zeros(5)).data
        np.testing.assert_array_equal(out, 0.0)

    def test_unit_variance_pair(self):
        out = layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), epsilon=0.0).data
        np.testing.assert_allclose(out, [1.0, -1.0], rtol=1e-15)

    def test_standardises(self):
        out = layer_norm(np.random.default_rng(4).normal(3, 5, size=50), np.ones(50),
                         np.zeros(50), epsilon=1e-12).data
        assert abs(out.mean()) < 1e-12
        assert out.var() == pytest.approx(1.0, abs=1e-9)

    def test_gradients(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        gain, bias = param(rng.normal(size=4)), param(rng.normal(size=4))
        w = rng.normal(size=(3, 4))
        rep = T.gradient_check(lambda: T.sum_(layer_norm(x, gain, bias) * w),
                               {"x": x, "gain": gain, "bias": bias})
        assert rep.max_error < 1e-4, rep.lines()


def small_grkan(variant="sigkan", seed=6):
    return GrkanParams.init(6, 3, np.random.default_rng(seed), variant=variant)


class TestGrkan:
    def test_closed_gate_is_residual_passthrough(self):
        p = small_grkan()
        p.glu.b4.data[:] = -1e4
        s = np.random.default_rng(7).normal(size=6)
        x = dense_forward(s, p.projection)
        expected = layer_norm(x, p.ln_gain, p.ln_bias, p.epsilon).data
        np.testing.assert_allclose(grkan_forward(s, p).data, expected, atol=1e-12)

    def test_zero_input_is_pure(self):
        p = small_grkan()
        a, b = grkan_forward(np.zeros(6), p).data, grkan_forward(np.zeros(6), p).data
        assert a.tobytes() == b.tobytes()

    def test_wrong_width(self):
        with pytest.raises(ShapeError, match="expected 6"):
            grkan_forward(np.zeros(5), small_grkan())

    @pytest.mark.parametrize("variant", ["sigkan", "sigdense"])
    def test_gradients(self, variant):
        p = small_grkan(variant)
        p.glu.b4.data = np.array([0.2, -0.1, 0.3])
        s = Tensor(np.random.default_rng(8).uniform(-1, 1, size=(2, 6)), requires_grad=True)
        w = np.random.default_rng(9).normal(size=(2, 3))
        params = {"s": s, **dict(named_parameters(p))}
        rep = T.gradient_check(lambda: T.sum_(grkan_forward(s, p) * w), params)
        assert rep.max_error < 1e-4, rep.lines()

    def test_sublayer_kinds(self):
        assert isinstance(small_grkan("sigkan").eta2, KanLinearParams)
        assert small_grkan("sigkan").eta2.base_activation == "elu"
        assert small_grkan("sigkan").eta1.base_activation == "silu"
        assert isinstance(small_grkan("sigdense").eta1, DenseParams)


def small_layer(variant="sigkan", d_in=2, d_out=3, seed=10):
    return SigKanLayerParams.init(d_in, d_out, np.random.default_rng(seed), variant=variant)


class TestSigKanLayer:
    def test_constant_gate_gives_uniform_weights(self):
        p = small_layer()
        p.grkan.ln_gain.data[:] = 0.0
        p.grkan.ln_bias.data[:] = 0.7
        x = np.random.default_rng(11).uniform(-1, 1, size=(5, 2))
        with watch_weights() as seen:
            out = sigkan_layer_forward(x, p).data
        np.testing.assert_allclose(seen[0], 1 / 3, rtol=1e-15)
        np.testing.assert_allclose(out, kan_sequence_apply(x, p.transform).data / 3, rtol=1e-14)

    @pytest.mark.parametrize("variant", ["sigkan", "sigdense"])
    def test_shape_and_weights(self, variant):
        p = small_layer(variant, d_in=4, d_out=6)
        x = np.random.default_rng(12).normal(size=(3, 7, 4))
        with watch_weights() as seen:
            out = sigkan_layer_forward(x, p)
        assert out.shape == (3, 7, 6)
        psi = seen[0]
        assert psi.shape == (3, 6)
        assert np.all(psi >= 0)
        np.testing.assert_allclose(psi.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_weights_shared_over_time(self):
        p = small_layer()
        x = np.random.default_rng(13).normal(size=(6, 2))
        with watch_weights() as seen:
            out = sigkan_layer_forward(x, p).data
        np.testing.assert_allclose(out, seen[0][0] * kan_sequence_apply(x * p.scale.data, p.transform).data,
                                   rtol=1e-14)

    @pytest.mark.parametrize("variant", ["sigkan", "sigdense"])
    def test_gradients_including_scale(self, variant):
        p = small_layer(variant)
        p.scale.data = np.array([0.8, 1.3])
        x = Tensor(np.random.default_rng(14).uniform(-1, 1, size=(2, 5, 2)), requires_grad=True)
        w = np.random.default_rng(15).normal(size=(2, 5, 3))
        params = {"x": x, **dict(named_parameters(p))}
        rep = T.gradient_check(lambda: T.sum_(sigkan_layer_forward(x, p) * w), params)
        assert rep.max_error < 1e-4, rep.lines()
        assert rep.errors["scale"] < 1e-4

    def test_single_step_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="sigkan.model"):
            sigkan_layer_forward(np.ones((1, 2)), small_layer())
        assert "zero signature" in caplog.text

    def test_overflow_names_window(self):
        x = np.zeros((3, 4, 2))
        x[1, 2] = 1e200
        with pytest.raises(NumericalError, match=r"\[1\]"):
            sigkan_layer_forward(x, small_layer())

    def test_augmented_signature_width(self):
        p = SigKanLayerParams.init(2, 3, np.random.default_rng(0), time_channel=True, basepoint=True)
        assert p.grkan.projection.in_dim == 12
        assert sigkan_layer_forward(np.ones((4, 2)), p).shape == (4, 3)


class TestNetwork:
    def test_sk1_structure(self):
        net = SigKanNetwork.init(NetworkConfig(d_in=19, seq_len=45, units=100), seed=0)
        layer = net.layers[0]
        assert layer.grkan.projection.in_dim == 380
        assert layer.grkan.d_model == 100
        assert layer.transform.spline_coeffs.shape == (100, 19, 8)
        assert net.head_hidden.in_dim == 45 * 100 and net.head_hidden.out_dim == 100
        assert net.head_hidden.activation == "relu"
        x = np.random.default_rng(1).uniform(0, 1, size=(45, 19))
        with watch_weights() as seen:
            y = net.forward(x)
        assert y.shape == (1,)
        assert seen[0].shape == (1, 100)

    def test_sk2_chain(self):
        net = SigKanNetwork.init(NetworkConfig(d_in=19, seq_len=45, units=20, n_layers=2), seed=0)
        assert [(l.d_in, l.d_out) for l in net.layers] == [(19, 20), (20, 20)]
        assert net.layers[1].grkan.projection.in_dim == 420
        assert net.forward(np.zeros((2, 45, 19))).shape == (2, 1)

    def test_sigdense_structure(self):
        net = SigKanNetwork.init(NetworkConfig(d_in=19, seq_len=45, units=100, variant="sigdense"))
        layer = net.layers[0]
        assert isinstance(layer.transform, DenseParams)
        assert isinstance(layer.grkan.eta2, DenseParams) and isinstance(layer.grkan.eta1, DenseParams)
        assert net.forward(np.zeros((45, 19))).shape == (1,)

    def test_wrong_window_shape(self):
        net = SigKanNetwork.init(NetworkConfig(d_in=2, seq_len=5, units=3))
        with pytest.raises(ShapeError, match=r"\(batch, 5, 2\)"):
            net.forward(np.zeros((1, 6, 2)))

    def test_deterministic(self):
        cfg = NetworkConfig(d_in=3, seq_len=6, units=4, n_ahead=2)
        x = np.random.default_rng(2).normal(size=(4, 6, 3))
        a = SigKanNetwork.init(cfg, seed=7).forward(x).data
        b = SigKanNetwork.init(cfg, seed=7).forward(x).data
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("variant", ["sigkan", "sigdense"])
    def test_miniature_gradient_check(self, variant):
        cfg = NetworkConfig(d_in=2, seq_len=5, units=3, sig_level=2, n_layers=1, hidden=4,
                            variant=variant)
        net = SigKanNetwork.init(cfg, seed=3)
        x = np.random.default_rng(4).uniform(-1, 1, size=(3, 5, 2))
        y = np.random.default_rng(5).normal(size=(3, 1))
        rep = T.gradient_check(lambda: T.mean(T.square(net.forward(x) - y)), net.named_parameters())
        assert rep.max_error < 1e-4, rep.lines()
        assert any(name.endswith("scale") for name in rep.errors)

    def test_config_round_trip(self):
        cfg = NetworkConfig(d_in=3, seq_len=50, units=7, variant="sigdense", grid_lo=-2.0)
        assert NetworkConfig.from_dict(cfg.to_dict()) == cfg

    def test_config_rejects_unknown_variant(self):
        with pytest.raises(ValueError, match="variant"):
            NetworkConfig(d_in=1, seq_len=3, variant="tkan")


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 5, 2), elements=st.floats(-3, 3, allow_subnormal=False)))
def test_weights_are_probability_vectors(x):
    p = small_layer(d_out=5)
    with watch_weights() as seen:
        sigkan_layer_forward(x, p)
    psi = seen[0]
    assert np.all(psi >= 0)
    np.testing.assert_allclose(psi.sum(axis=1), 1.0, rtol=0, atol=1e-12)
