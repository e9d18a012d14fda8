import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsqnet.errors import ConfigError, NumericError, ShapeError
from fsqnet.ops import (
    ConvSpec,
    channel_concat,
    channel_split,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    dropout,
    dropout_mask,
    global_avg_pool,
    global_avg_pool_backward,
    maxpool2d,
    maxpool2d_backward,
    relu,
    relu_backward,
    softmax,
)
from oracles import fd_gradient, naive_conv2d, rel_error

FD_TOL = 1e-3


def _randn(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


class TestConvSpec:
    def test_out_hw_floor(self):
        spec = ConvSpec(1, 1, 3, 3, stride=2, pad=0)
        assert spec.out_hw(7, 7) == (3, 3)

    def test_invalid_fields(self):
        with pytest.raises(ConfigError):
            ConvSpec(1, 1, 0, 3)
        with pytest.raises(ConfigError):
            ConvSpec(1, 1, 3, 3, stride=0)
        with pytest.raises(ConfigError):
            ConvSpec(1, 1, 3, 3, pad=-1)

    def test_nonpositive_output(self):
        with pytest.raises(ShapeError):
            ConvSpec(1, 1, 5, 5).out_hw(3, 3)


class TestConvForward:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((2, 1, 4, 4)).astype(np.float32)
        w = np.ones((1, 1, 1, 1), dtype=np.float32)
        b = np.zeros(1, dtype=np.float32)
        out = conv2d_forward(x, w, b, ConvSpec(1, 1, 1, 1))
        assert np.array_equal(out, x)

    def test_zero_weight_gives_bias(self):
        x = np.random.default_rng(1).standard_normal((1, 2, 3, 3)).astype(np.float32)
        w = np.zeros((2, 2, 3, 3), dtype=np.float32)
        b = np.array([1.5, -2.0], dtype=np.float32)
        out = conv2d_forward(x, w, b, ConvSpec(2, 2, 3, 3, pad=1))
        assert (out[:, 0] == 1.5).all() and (out[:, 1] == -2.0).all()

    def test_diagonal_window(self):
        x = np.array([[[[1, 2], [3, 4]]]], dtype=np.float32)
        w = np.array([[[[1, 0], [0, 1]]]], dtype=np.float32)
        b = np.zeros(1, dtype=np.float32)
        out = conv2d_forward(x, w, b, ConvSpec(1, 1, 2, 2))
        assert out.tolist() == [[[[5.0]]]]

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d_forward(
                np.zeros((1, 3, 4, 4), np.float32),
                np.zeros((2, 2, 3, 3), np.float32),
                np.zeros(2, np.float32),
                ConvSpec(2, 2, 3, 3),
            )

    @given(
        st.integers(1, 3),
        st.integers(1, 3),
        st.integers(1, 3),
        st.sampled_from([1, 3]),
        st.sampled_from([1, 2]),
        st.sampled_from([0, 1]),
        st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=40)
    def test_matches_naive_oracle_bit_exactly(self, n, c, o, k, stride, pad, seed):
        rng = np.random.default_rng(seed)
        h = int(rng.integers(max(1, k - 2 * pad), 8))
        w = int(rng.integers(max(1, k - 2 * pad), 8))
        x = _randn(rng, n, c, h, w)
        weight = _randn(rng, o, c, k, k)
        bias = _randn(rng, o)
        ours = conv2d_forward(x, weight, bias, ConvSpec(o, c, k, k, stride=stride, pad=pad))
        naive = naive_conv2d(x, weight, bias, stride, pad)
        assert np.array_equal(ours, naive)


class TestConvBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(2)
        x, w = _randn(rng, 1, 2, 4, 4), _randn(rng, 3, 2, 3, 3)
        spec = ConvSpec(3, 2, 3, 3, pad=1)
        g = conv2d_backward(x, w, spec, np.zeros((1, 3, 4, 4), np.float32))
        assert not g.d_input.any() and not g.d_weight.any() and not g.d_bias.any()

    def test_identity_kernel_chain_rule(self):
        rng = np.random.default_rng(3)
        x = _randn(rng, 2, 1, 4, 4)
        w = np.ones((1, 1, 1, 1), dtype=np.float32)
        d_out = _randn(rng, 2, 1, 4, 4)
        g = conv2d_backward(x, w, ConvSpec(1, 1, 1, 1), d_out)
        assert np.allclose(g.d_input, d_out, atol=1e-6)

    def test_grad_shapes(self):
        rng = np.random.default_rng(4)
        x, w = _randn(rng, 2, 3, 5, 5), _randn(rng, 4, 3, 3, 3)
        spec = ConvSpec(4, 3, 3, 3, stride=2, pad=1)
        g = conv2d_backward(x, w, spec, _randn(rng, 2, 4, 3, 3))
        assert g.d_input.shape == x.shape
        assert g.d_weight.shape == w.shape
        assert g.d_bias.shape == (4,)

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_matches_finite_differences(self, seed, stride, pad):
        rng = np.random.default_rng(seed)
        spec = ConvSpec(2, 3, 3, 3, stride=stride, pad=pad)
        x, w, b = _randn(rng, 2, 3, 5, 5), _randn(rng, 2, 3, 3, 3), _randn(rng, 2)
        oh, ow = spec.out_hw(5, 5)
        d_out = _randn(rng, 2, 2, oh, ow)
        g = conv2d_backward(x, w, spec, d_out)
        forward = lambda: conv2d_forward(x, w, b, spec)
        assert rel_error(fd_gradient(forward, x, d_out), g.d_input) < FD_TOL
        assert rel_error(fd_gradient(forward, w, d_out), g.d_weight) < FD_TOL
        assert rel_error(fd_gradient(forward, b, d_out), g.d_bias) < FD_TOL


class TestRelu:
    def test_sign_cases(self):
        assert relu(np.array([-1.0, 0.0, 2.0], np.float32)).tolist() == [0.0, 0.0, 2.0]

    def test_positive_unchanged(self):
        x = np.abs(np.random.default_rng(5).standard_normal(10)).astype(np.float32) + 0.1
        assert np.array_equal(relu(x), x)

    def test_backward_routing(self):
        x = np.array([-1.0, 0.5, 0.0], np.float32)
        d = np.array([10.0, 20.0, 30.0], np.float32)
        assert relu_backward(x, d).tolist() == [0.0, 20.0, 0.0]

    def test_backward_matches_fd_away_from_kink(self):
        rng = np.random.default_rng(6)
        x = _randn(rng, 3, 4)
        x[np.abs(x) < 0.05] = 0.1  # keep clear of the non-differentiable point
        d_out = _randn(rng, 3, 4)
        fd = fd_gradient(lambda: relu(x), x, d_out)
        assert rel_error(fd, relu_backward(x, d_out)) < FD_TOL


class TestMaxPool:
    def test_constant_field(self):
        x = np.full((1, 1, 4, 4), 3.5, np.float32)
        assert (maxpool2d(x, 2, 2) == 3.5).all()

    def test_single_window(self):
        x = np.array([[[[1, 2], [3, 4]]]], np.float32)
        assert maxpool2d(x, 2, 2).tolist() == [[[[4.0]]]]

    def test_backward_routes_to_argmax(self):
        x = np.array([[[[1, 2], [3, 4]]]], np.float32)
        d = np.array([[[[1.0]]]], np.float32)
        assert maxpool2d_backward(x, 2, 2, d).tolist() == [[[[0.0, 0.0], [0.0, 1.0]]]]

    def test_tie_breaks_to_lowest_flat_index(self):
        x = np.full((1, 1, 2, 2), 7.0, np.float32)
        d = np.array([[[[1.0]]]], np.float32)
        assert maxpool2d_backward(x, 2, 2, d).tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]

    def test_window_too_large(self):
        with pytest.raises(ShapeError):
            maxpool2d(np.zeros((1, 1, 2, 2), np.float32), 3, 1)

    def test_overlapping_windows_accumulate(self):
        x = np.array([[[[0, 0, 0], [0, 9, 0], [0, 0, 0]]]], np.float32)
        d = np.ones((1, 1, 2, 2), np.float32)
        out = maxpool2d_backward(x, 2, 1, d)
        assert out[0, 0, 1, 1] == 4.0  # the center wins all four windows

    @pytest.mark.parametrize("seed", range(3))
    def test_backward_matches_fd(self, seed):
        rng = np.random.default_rng(seed)
        x = _randn(rng, 1, 2, 4, 4)
        d_out = _randn(rng, 1, 2, 2, 2)
        fd = fd_gradient(lambda: maxpool2d(x, 2, 2), x, d_out)
        assert rel_error(fd, maxpool2d_backward(x, 2, 2, d_out)) < FD_TOL


class TestConcatSplit:
    def test_layout(self):
        a = np.ones((1, 1, 2, 2), np.float32)
        b = np.full((1, 1, 2, 2), 2.0, np.float32)
        out = channel_concat(a, b)
        assert out.shape == (1, 2, 2, 2)
        assert (out[:, 0] == 1.0).all() and (out[:, 1] == 2.0).all()

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(7)
        a, b = _randn(rng, 2, 3, 4, 4), _randn(rng, 2, 2, 4, 4)
        ra, rb = channel_split(channel_concat(a, b), 3)
        assert np.array_equal(ra, a) and np.array_equal(rb, b)

    def test_backward_is_split(self):
        rng = np.random.default_rng(8)
        d_a, d_b = _randn(rng, 1, 2, 3, 3), _randn(rng, 1, 1, 3, 3)
        back_a, back_b = channel_split(channel_concat(d_a, d_b), 2)
        assert np.array_equal(back_a, d_a) and np.array_equal(back_b, d_b)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            channel_concat(np.zeros((1, 1, 2, 2), np.float32), np.zeros((1, 1, 3, 3), np.float32))

    def test_bad_split_point(self):
        with pytest.raises(ShapeError):
            channel_split(np.zeros((1, 2, 2, 2), np.float32), 2)


class TestGlobalAvgPool:
    def test_constant_plane(self):
        x = np.full((2, 3, 4, 4), 1.25, np.float32)
        assert (global_avg_pool(x) == 1.25).all()

    def test_hand_value(self):
        x = np.array([[[[1, 2], [3, 4]]]], np.float32)
        assert global_avg_pool(x).tolist() == [[2.5]]

    def test_singleton_identity(self):
        rng = np.random.default_rng(9)
        x = _randn(rng, 2, 5, 1, 1)
        assert np.array_equal(global_avg_pool(x), x[:, :, 0, 0])

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(10)
        x = _randn(rng, 2, 3, 3, 3)
        d_out = _randn(rng, 2, 3)
        fd = fd_gradient(lambda: global_avg_pool(x), x, d_out)
        assert rel_error(fd, global_avg_pool_backward(d_out, 3, 3)) < FD_TOL


class TestDense:
    def test_identity_weight(self):
        x = np.random.default_rng(11).standard_normal((3, 4)).astype(np.float32)
        out = dense_forward(x, np.eye(4, dtype=np.float32), np.zeros(4, np.float32))
        assert np.allclose(out, x, atol=1e-6)

    def test_zero_input_gives_bias(self):
        b = np.array([1.0, 2.0, 3.0], np.float32)
        out = dense_forward(np.zeros((2, 4), np.float32), np.zeros((4, 3), np.float32), b)
        assert np.array_equal(out, np.tile(b, (2, 1)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dense_forward(np.zeros((2, 3), np.float32), np.zeros((4, 5), np.float32),
                          np.zeros(5, np.float32))

    @pytest.mark.parametrize("seed", range(3))
    def test_gradients_match_fd(self, seed):
        rng = np.random.default_rng(seed)
        x, w, b = _randn(rng, 3, 4), _randn(rng, 4, 5), _randn(rng, 5)
        d_out = _randn(rng, 3, 5)
        g = dense_backward(x, w, d_out)
        forward = lambda: dense_forward(x, w, b)
        assert rel_error(fd_gradient(forward, x, d_out), g.d_input) < FD_TOL
        assert rel_error(fd_gradient(forward, w, d_out), g.d_weight) < FD_TOL
        assert rel_error(fd_gradient(forward, b, d_out), g.d_bias) < FD_TOL


class TestSoftmax:
    def test_uniform_logits(self):
        out = softmax(np.zeros((1, 3), np.float32))
        assert np.allclose(out, 1.0 / 3.0, atol=1e-7)

    def test_scalar_oracle(self):
        out = softmax(np.array([[1.0, 2.0, 3.0]], np.float32))[0]
        expected = [0.090030573, 0.244728471, 0.665240956]
        assert np.allclose(out, expected, atol=1e-6)

    def test_shift_invariance(self):
        rng = np.random.default_rng(12)
        z = _randn(rng, 4, 5)
        assert np.allclose(softmax(z), softmax(z + np.float32(13.5)), atol=1e-6)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 5))
    def test_rows_sum_to_one_and_argmax_preserved(self, seed, m, n):
        z = (np.random.default_rng(seed).standard_normal((n, m)) * 10).astype(np.float32)
        p = softmax(z)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
        # float32 saturates to exactly 0/1 once logit gaps exceed ~16, so the
        # open-interval and argmax claims are only testable away from that
        assert ((p >= 0) & (p <= 1)).all()
        clear_winner = np.ptp(z, axis=1) < 10.0
        assert np.array_equal(p.argmax(axis=1)[clear_winner], z.argmax(axis=1)[clear_winner])

    def test_interior_probabilities_for_moderate_logits(self):
        rng = np.random.default_rng(16)
        z = rng.standard_normal((20, 6)).astype(np.float32)
        p = softmax(z)
        assert ((p > 0) & (p < 1)).all()
        assert np.array_equal(p.argmax(axis=1), z.argmax(axis=1))

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            softmax(np.array([[np.nan, 0.0]], np.float32))

    def test_needs_two_classes(self):
        with pytest.raises(ShapeError):
            softmax(np.zeros((2, 1), np.float32))

    def test_large_logits_stable(self):
        p = softmax(np.array([[1000.0, 1001.0]], np.float32))
        assert np.isfinite(p).all() and abs(p.sum() - 1.0) < 1e-6


class TestDropout:
    def test_rate_zero_identity(self):
        x = np.random.default_rng(13).standard_normal((3, 3)).astype(np.float32)
        assert np.array_equal(dropout(x, 0.0, seed=1, training=True), x)

    def test_inference_identity(self):
        x = np.random.default_rng(14).standard_normal((3, 3)).astype(np.float32)
        assert np.array_equal(dropout(x, 0.9, seed=1, training=False), x)

    def test_statistical_mean(self):
        x = np.ones(100_000, dtype=np.float32)
        out = dropout(x, 0.5, seed=42, training=True)
        assert abs(out.mean() - 1.0) < 0.02

    def test_deterministic_per_seed(self):
        x = np.ones((10, 10), dtype=np.float32)
        a = dropout(x, 0.3, seed=7, training=True)
        b = dropout(x, 0.3, seed=7, training=True)
        assert np.array_equal(a, b)

    def test_mask_values(self):
        mask = dropout_mask((1000,), 0.25, seed=3)
        assert set(np.unique(mask).tolist()) <= {0.0, np.float32(1.0 / 0.75)}

    def test_rate_one_rejected(self):
        with pytest.raises(ConfigError):
            dropout(np.ones(3, np.float32), 1.0, seed=0, training=True)


class TestPurity:
    def test_forward_ops_bit_stable(self):
        rng = np.random.default_rng(15)
        x = _randn(rng, 2, 3, 6, 6)
        w, b = _randn(rng, 4, 3, 3, 3), _randn(rng, 4)
        spec = ConvSpec(4, 3, 3, 3, pad=1)
        assert np.array_equal(conv2d_forward(x, w, b, spec), conv2d_forward(x, w, b, spec))
        assert np.array_equal(maxpool2d(x, 2, 2), maxpool2d(x, 2, 2))
        z = _randn(rng, 3, 4)
        assert np.array_equal(softmax(z), softmax(z))
