import itertools
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sigkan import tensor as T
from sigkan.oracles import integrate_signature, level2_iterated_sums, recursive_signature
from sigkan.sigcheck import run_suite
from sigkan.signature import (
    TruncatedSignature,
    augment_path,
    batch_signature,
    chen_product,
    level_offsets,
    path_signature,
    path_signature_backward,
    segment_signature,
    sig_dim,
    signature,
)


class TestSigDim:
    @pytest.mark.parametrize("dim,level,expected", [(2, 2, 6), (19, 2, 380), (3, 3, 39), (1, 4, 4)])
    def test_values(self, dim, level, expected):
        assert sig_dim(dim, level) == expected

    @pytest.mark.parametrize("dim,level", [(0, 2), (2, 0)])
    def test_rejects_zero(self, dim, level):
        with pytest.raises(ValueError):
            sig_dim(dim, level)

    def test_offsets_partition_layout(self):
        assert level_offsets(3, 3) == [0, 3, 12, 39]


class TestSegmentSignature:
    def test_zero_increment(self):
        np.testing.assert_array_equal(segment_signature([0.0, 0.0], 2).coeffs, 0.0)

    def test_increment_1_2(self):
        s = segment_signature([1.0, 2.0], 2)
        np.testing.assert_allclose(s.coeffs, [1, 2, 0.5, 1, 1, 2], rtol=0, atol=1e-15)
        # independent check: quadrature of the straight line, 1e4 sub-steps
        oracle = integrate_signature(np.array([[0.0, 0.0], [1.0, 2.0]]), 2, substeps=10_000)
        np.testing.assert_allclose(s.coeffs, oracle, atol=1e-6)

    def test_increment_1_1_level3(self):
        s = segment_signature([1.0, 1.0], 3)
        np.testing.assert_allclose(s.block(3), 1 / 6, atol=1e-15)
        oracle = integrate_signature(np.array([[0.0, 0.0], [1.0, 1.0]]), 3, substeps=10_000)
        np.testing.assert_allclose(s.coeffs, oracle, atol=1e-6)


class TestChenProduct:
    def test_zero_is_identity(self):
        s = path_signature(np.random.default_rng(0).normal(size=(4, 3)), 3)
        np.testing.assert_array_equal(chen_product(TruncatedSignature.zero(3, 3), s).coeffs, s.coeffs)
        np.testing.assert_array_equal(chen_product(s, TruncatedSignature.zero(3, 3)).coeffs, s.coeffs)

    def test_l_shaped_path(self):
        s = chen_product(segment_signature([1.0, 0.0], 2), segment_signature([0.0, 1.0], 2))
        np.testing.assert_allclose(s.coeffs, [1, 1, 0.5, 1, 0, 0.5], atol=1e-15)
        np.testing.assert_allclose(s.block(2).ravel(),
                                   level2_iterated_sums([[0, 0], [1, 0], [1, 1]]), atol=1e-15)

    def test_matches_three_point_path(self):
        d1, d2 = np.array([0.3, -1.2]), np.array([0.7, 0.4])
        glued = chen_product(segment_signature(d1, 3), segment_signature(d2, 3))
        direct = path_signature(np.array([np.zeros(2), d1, d1 + d2]), 3)
        np.testing.assert_allclose(glued.coeffs, direct.coeffs, atol=1e-15)

    def test_mismatch_rejected(self):
        with pytest.raises(ValueError, match="matching"):
            chen_product(TruncatedSignature.zero(2, 2), TruncatedSignature.zero(3, 2))
        with pytest.raises(ValueError):
            chen_product(TruncatedSignature.zero(2, 2), TruncatedSignature.zero(2, 3))


class TestPathSignature:
    def test_constant_path(self):
        np.testing.assert_array_equal(path_signature(np.ones((7, 3)), 3).coeffs, 0.0)

    def test_single_point(self):
        np.testing.assert_array_equal(path_signature([[1.0, 2.0]], 2).coeffs, np.zeros(6))

    def test_two_points_equal_segment(self):
        p = np.array([[0.5, 1.0], [-0.2, 3.0]])
        np.testing.assert_array_equal(path_signature(p, 3).coeffs,
                                      segment_signature(p[1] - p[0], 3).coeffs)

    def test_level1_is_total_increment(self):
        p = np.random.default_rng(3).normal(size=(6, 4))
        np.testing.assert_allclose(path_signature(p, 2).block(1), p[-1] - p[0], atol=1e-14)

    def test_midpoint_insertion(self):
        p = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]])
        q = np.insert(p, 2, 0.25 * p[1] + 0.75 * p[2], axis=0)
        np.testing.assert_allclose(path_signature(q, 4).coeffs, path_signature(p, 4).coeffs,
                                   rtol=0, atol=1e-12)

    def test_ragged_points_rejected(self):
        with pytest.raises(ValueError, match="inconsistent"):
            path_signature([[0.0, 1.0], [1.0]], 2)

    def test_empty_word_is_one(self):
        assert path_signature(np.eye(2), 2)[()] == 1.0


class TestBackward:
    def test_level1_upstream_telescopes(self):
        p = np.random.default_rng(1).normal(size=(5, 2))
        u = np.array([0.3, -0.7, 0, 0, 0, 0])
        g = path_signature_backward(p, 2, u)
        np.testing.assert_allclose(g[-1], u[:2], atol=1e-15)
        np.testing.assert_allclose(g[0], -u[:2], atol=1e-15)
        np.testing.assert_allclose(g[1:-1], 0.0, atol=1e-15)

    def test_zero_upstream(self):
        p = np.random.default_rng(2).normal(size=(4, 3))
        np.testing.assert_array_equal(path_signature_backward(p, 3, np.zeros(39)), 0.0)

    def test_three_point_path_matches_fd(self):
        rng = np.random.default_rng(4)
        p, u = rng.normal(size=(3, 2)), rng.normal(size=6)
        g = path_signature_backward(p, 2, u)
        h = 1e-5
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            pp, pm = p.copy(), p.copy()
            pp[idx] += h
            pm[idx] -= h
            fd[idx] = (recursive_signature(pp, 2) @ u - recursive_signature(pm, 2) @ u) / (2 * h)
        assert T.relative_error(g, fd) < 1e-6

    def test_wrong_upstream_length(self):
        with pytest.raises(ValueError, match="expected 6"):
            path_signature_backward(np.zeros((3, 2)), 2, np.zeros(5))

    def test_tape_primitive(self):
        rng = np.random.default_rng(5)
        x = T.Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
        w = rng.normal(size=(3, 6))
        rep = T.gradient_check(lambda: T.sum_(signature(x, 2) * w), {"x": x})
        assert rep.max_error < 1e-6


class TestOracles:
    def test_integration_oracle_on_curved_path(self):
        p = np.random.default_rng(6).uniform(-1, 1, size=(5, 3))
        np.testing.assert_allclose(path_signature(p, 3).coeffs, integrate_signature(p, 3),
                                   rtol=1e-3, atol=1e-6)

    def test_recursive_oracle(self):
        p = np.random.default_rng(7).uniform(-1, 1, size=(6, 3))
        np.testing.assert_allclose(path_signature(p, 4).coeffs, recursive_signature(p, 4),
                                   rtol=0, atol=1e-12)


class TestAugmentation:
    def test_basepoint_prepends_origin(self):
        x = np.arange(6.0).reshape(1, 3, 2) + 1
        out = augment_path(x, basepoint=True).data
        np.testing.assert_array_equal(out[0, 0], [0, 0])
        np.testing.assert_array_equal(out[0, 1:], x[0])

    def test_time_channel(self):
        out = augment_path(np.zeros((2, 5, 1)), time=True).data
        np.testing.assert_allclose(out[1, :, 1], np.linspace(0, 1, 5))

    def test_basepoint_makes_signature_see_level(self):
        x = np.array([[[2.0], [2.0], [2.0]]])
        plain = batch_signature(x, 1)
        based = batch_signature(augment_path(x, basepoint=True).data, 1)
        assert plain[0, 0] == 0.0 and based[0, 0] == 2.0


def test_suite_default_passes():
    results = run_suite(level=2, dim=2, trials=30, seed=0)
    assert all(r.passed for r in results), [r.line() for r in results]


paths = st.integers(2, 5).flatmap(lambda n: arrays(
    np.float64, (n, 2), elements=st.floats(-2, 2, allow_nan=False, allow_subnormal=False)))


@settings(max_examples=40, deadline=None)
@given(paths, paths)
def test_chen_identity_property(p, q):
    q = q - q[0] + p[-1]
    whole = path_signature(np.vstack([p, q[1:]]), 3).coeffs
    glued = chen_product(path_signature(p, 3), path_signature(q, 3)).coeffs
    np.testing.assert_allclose(glued, whole, rtol=0, atol=1e-12 * max(1.0, np.abs(whole).max()))


@settings(max_examples=40, deadline=None)
@given(paths)
def test_shuffle_property(p):
    s = path_signature(p, 2)
    for i, j in itertools.product(range(2), repeat=2):
        assert s[(i,)] * s[(j,)] == pytest.approx(s[(i, j)] + s[(j, i)], abs=1e-12, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-1.5, 1.5, allow_subnormal=False)),
       st.integers(1, 4))
def test_straight_line_closed_form(delta, level):
    s = path_signature(np.vstack([np.zeros(3), delta / 2, delta]), level)
    for k in range(1, level + 1):
        for word in itertools.product(range(3), repeat=k):
            assert s[word] == pytest.approx(np.prod(delta[list(word)]) / factorial(k), abs=1e-12)
