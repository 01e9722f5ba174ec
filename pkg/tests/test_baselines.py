import numpy as np
import pytest

from sigkan import tensor as T
from sigkan.baselines import (
    MlpConfig,
    MlpNetwork,
    moving_average_predict,
    moving_average_sweep,
)
from sigkan.tensor import ShapeError


class TestMlp:
    def test_layer_dims(self):
        net = MlpNetwork.init(MlpConfig(d_in=19, seq_len=45, n_ahead=3))
        assert [(l.in_dim, l.out_dim, l.activation) for l in net.hidden] == \
            [(855, 100, "relu"), (100, 100, "relu")]
        assert (net.out.in_dim, net.out.out_dim, net.out.activation) == (100, 3, "identity")

    def test_zero_weights(self):
        net = MlpNetwork.init(MlpConfig(d_in=2, seq_len=3, hidden=4))
        for p in net.named_parameters().values():
            p.data[...] = 0.0
        np.testing.assert_array_equal(net.forward(np.ones((3, 2))).data, [0.0])

    def test_scalar_recomputation(self):
        net = MlpNetwork.init(MlpConfig(d_in=1, seq_len=2, hidden=1, n_hidden=2, n_ahead=1), seed=3)
        x = np.array([[0.4], [-0.3]])
        h = x.ravel()
        for layer in net.hidden:
            h = np.maximum(layer.weight.data @ h + layer.bias.data, 0.0)
        y = net.out.weight.data @ h + net.out.bias.data
        np.testing.assert_allclose(net.forward(x).data, y, rtol=1e-15)

    def test_output_length(self):
        net = MlpNetwork.init(MlpConfig(d_in=3, seq_len=5, n_ahead=7, hidden=6))
        assert net.forward(np.zeros((5, 3))).shape == (7,)
        assert net.predict(np.zeros((4, 5, 3))).shape == (4, 7)

    def test_shape_mismatch(self):
        net = MlpNetwork.init(MlpConfig(d_in=3, seq_len=5, hidden=6))
        with pytest.raises(ShapeError):
            net.forward(np.zeros((4, 3)))

    def test_gradient_check(self):
        net = MlpNetwork.init(MlpConfig(d_in=2, seq_len=4, hidden=5, n_ahead=2), seed=1)
        x = np.random.default_rng(0).uniform(-1, 1, size=(3, 4, 2))
        y = np.random.default_rng(1).normal(size=(3, 2))
        rep = T.gradient_check(lambda: T.mean(T.square(net.forward(x) - y)), net.named_parameters())
        assert rep.max_error < 1e-4, rep.lines()


class TestMovingAverage:
    def test_k1_is_previous_value(self):
        x = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
        preds, truth, times = moving_average_predict(x, 1)
        np.testing.assert_array_equal(preds[:, 0], x[:-1])
        np.testing.assert_array_equal(truth[:, 0], x[1:])

    def test_example(self):
        preds, _, times = moving_average_predict(np.array([1.0, 2.0, 3.0, 4.0]), 2)
        # origin t=2 (0-based) forecasts x[3] = 4 from mean(2, 3)
        assert preds[list(times).index(2), 0] == 2.5

    def test_constant_series(self):
        preds, truth, _ = moving_average_predict(np.full(20, 2.0), 5, n_ahead=3)
        np.testing.assert_array_equal(preds, truth)
        with pytest.warns(RuntimeWarning):
            res = moving_average_sweep(np.full(80, 2.0), np.arange(60, 70), 1)
        assert np.isnan(res.r2)

    def test_short_history_dropped(self):
        _, _, times = moving_average_predict(np.arange(10.0), 4, times=[0, 2, 3, 5])
        np.testing.assert_array_equal(times, [3, 5])

    def test_horizon_columns(self):
        x = np.arange(10.0)
        preds, truth, times = moving_average_predict(x, 3, n_ahead=2)
        t = times[0]
        np.testing.assert_array_equal(truth[0], x[t + 1:t + 3])
        np.testing.assert_array_equal(preds[0], [x[t - 2:t + 1].mean()] * 2)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            moving_average_predict(np.arange(5.0), 0)


class TestSweep:
    def test_picks_best_and_breaks_ties_low(self):
        rng = np.random.default_rng(0)
        x = np.cumsum(rng.normal(size=400))
        res = moving_average_sweep(x, np.arange(100, 390), 1)
        assert res.r2 == max(res.scores.values())
        assert res.window == min(k for k, v in res.scores.items() if v == res.r2)

    def test_tie_goes_to_smallest(self):
        x = np.tile([1.0, 1.0, 3.0, 3.0], 40)
        res = moving_average_sweep(x, np.arange(60, 150), 1, windows=[4, 8, 2])
        tied = [k for k, v in res.scores.items() if v == res.r2]
        assert res.window == min(tied)

    def test_window_range(self):
        with pytest.raises(ValueError, match=r"\[1, 50\]"):
            moving_average_sweep(np.arange(100.0), np.arange(60, 80), 1, windows=[51])
