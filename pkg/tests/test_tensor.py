import numpy as np
import pytest

from rnaligner.errors import ConfigError, ShapeError, UsageError
from rnaligner import tensor as tz
from rnaligner.tensor import (
    Graph, Tensor, backward, concat, conv2d, layer_norm, log_add_exp,
    log_softmax, matmul, max_pool_time, parameter, softmax, stack, tsum,
    zero_grad,
)


def conv2d_reference(x, k, st, sf):
    """Direct nested-loop convolution with SAME zero padding (oracle)."""
    T, F, ci = x.shape
    kt, kf, _, co = k.shape
    to = -(-T // st)
    fo = -(-F // sf)
    pad_t = max((to - 1) * st + kt - T, 0)
    pad_f = max((fo - 1) * sf + kf - F, 0)
    pt0, pf0 = pad_t // 2, pad_f // 2
    xp = np.pad(x, ((pt0, pad_t - pt0), (pf0, pad_f - pf0), (0, 0)))
    out = np.zeros((to, fo, co))
    for ot in range(to):
        for of in range(fo):
            for c in range(co):
                acc = 0.0
                for i in range(kt):
                    for j in range(kf):
                        for ic in range(ci):
                            acc += xp[ot * st + i, of * sf + j, ic] * k[i, j, ic, c]
                out[ot, of, c] = acc
    return out


class TestMatmul:
    def test_identity(self):
        b = Tensor([[3.0, 4.0], [5.0, 6.0]])
        out = matmul(Tensor(np.eye(2)), b)
        np.testing.assert_array_equal(out.data, b.data)

    def test_zero(self):
        out = matmul(Tensor(np.zeros((2, 2))), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_hand_arithmetic(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_gradients_reach_both_inputs(self):
        a = parameter(np.arange(6.0).reshape(2, 3))
        b = parameter(np.arange(12.0).reshape(3, 4))
        with Graph() as g:
            out = tsum(matmul(a, b))
            g.backward(out)
        np.testing.assert_allclose(a.grad, np.ones((2, 4)) @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((2, 4)))


class TestConv2d:
    def test_ceil_output_length(self):
        x = Tensor(np.ones((7, 4, 1)))
        k = Tensor(np.ones((3, 3, 1, 2)))
        out = conv2d(x, k, stride_t=2, stride_f=1)
        assert out.shape == (4, 4, 2)

    def test_one_by_one_kernel_sums_channels(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 3, 2))
        k = np.ones((1, 1, 2, 1))
        out = conv2d(Tensor(x), Tensor(k))
        np.testing.assert_allclose(out.data[:, :, 0], x.sum(axis=2))

    def test_matches_sliding_window_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 4, 1))
        k = rng.normal(size=(3, 3, 1, 2))
        out = conv2d(Tensor(x), Tensor(k))
        np.testing.assert_allclose(out.data, conv2d_reference(x, k, 1, 1), atol=1e-12)

    def test_matches_oracle_with_strides(self):
        rng = np.random.default_rng(8)
        for st, sf, T, F, ci, co in [(2, 2, 7, 6, 2, 3), (3, 1, 8, 5, 1, 2), (2, 3, 4, 9, 3, 1)]:
            x = rng.normal(size=(T, F, ci))
            k = rng.normal(size=(3, 3, ci, co))
            out = conv2d(Tensor(x), Tensor(k), stride_t=st, stride_f=sf)
            np.testing.assert_allclose(out.data, conv2d_reference(x, k, st, sf), atol=1e-12)

    def test_output_lengths_follow_ceil_rule(self):
        k = Tensor(np.ones((3, 3, 1, 1)))
        for T in range(1, 33):
            for st in range(1, 5):
                out = conv2d(Tensor(np.ones((T, 4, 1))), k, stride_t=st)
                assert out.shape[0] == -(-T // st)

    def test_zero_sized_input_rejected(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((0, 4, 1))), Tensor(np.ones((3, 3, 1, 1))))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))


class TestMaxPoolTime:
    def test_exact_windows(self):
        x = Tensor(np.array([2.0, 5.0, 1.0, 3.0]).reshape(4, 1))
        out = max_pool_time(x, 2)
        np.testing.assert_array_equal(out.data[:, 0], [5.0, 3.0])

    def test_ragged_tail_zero_padded(self):
        x = Tensor(np.array([2.0, 5.0, 1.0]).reshape(3, 1))
        out = max_pool_time(x, 2)
        np.testing.assert_array_equal(out.data[:, 0], [5.0, 1.0])

    def test_full_negative_window_keeps_own_max(self):
        out = max_pool_time(Tensor(np.array([-3.0, -1.0]).reshape(2, 1)), 2)
        np.testing.assert_array_equal(out.data[:, 0], [-1.0])

    def test_all_negative_tail_surfaces_zero(self):
        # documented consequence of zero padding the ragged tail
        out = max_pool_time(Tensor(np.array([-3.0, -1.0, -2.0]).reshape(3, 1)), 2)
        np.testing.assert_array_equal(out.data[:, 0], [-1.0, 0.0])

    def test_width_zero_rejected(self):
        with pytest.raises(ConfigError):
            max_pool_time(Tensor(np.zeros((3, 1))), 0)

    def test_output_lengths_follow_ceil_rule(self):
        for T in range(1, 33):
            for w in range(1, 5):
                out = max_pool_time(Tensor(np.ones((T, 2))), w)
                assert out.shape[0] == -(-T // w)

    def test_gradient_routes_to_argmax(self):
        x = parameter(np.array([[1.0, 4.0], [3.0, 2.0], [5.0, -1.0]]))
        with Graph() as g:
            out = tsum(max_pool_time(x, 2))
            g.backward(out)
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])


class TestActivations:
    def test_fixed_points(self):
        assert tz.sigmoid(Tensor(0.0)).data == 0.5
        assert tz.tanh(Tensor(0.0)).data == 0.0
        assert tz.relu(Tensor(-2.5)).data == 0.0
        assert tz.relu(Tensor(3.0)).data == 3.0

    def test_kind_dispatch(self):
        x = Tensor([0.3, -0.7])
        np.testing.assert_array_equal(tz.activation(x, "relu").data, [0.3, 0.0])
        with pytest.raises(UsageError):
            tz.activation(x, "softplus")

    def test_derivatives_match_finite_differences(self):
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=(4,))
        h = 1e-6
        for kind in ("sigmoid", "tanh", "relu"):
            p = parameter(x0.copy())
            with Graph() as g:
                out = tsum(tz.activation(p, kind))
                g.backward(out)
            fwd = lambda v: tz.activation(Tensor(v), kind).data.sum()
            numeric = np.array([(fwd(x0 + h * e) - fwd(x0 - h * e)) / (2 * h)
                                for e in np.eye(4)])
            np.testing.assert_allclose(p.grad, numeric, atol=1e-6)


class TestSoftmax:
    def test_equal_logits_uniform(self):
        out = softmax(Tensor([[1.0, 1.0, 1.0, 1.0]]))
        np.testing.assert_allclose(out.data, 0.25)

    def test_shift_invariance(self):
        x = np.array([[0.3, -1.2, 2.0]])
        np.testing.assert_allclose(softmax(Tensor(x)).data,
                                   softmax(Tensor(x + 123.0)).data, atol=1e-12)

    def test_huge_logits_stable(self):
        out = softmax(Tensor([[1000.0, 0.0]]))
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data[0, 0], 1.0)

    def test_rows_sum_to_one_for_arbitrary_logits(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            x = rng.uniform(-1e3, 1e3, size=(3, 5))
            out = softmax(Tensor(x))
            np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_log_softmax_agrees_with_log_of_softmax(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 6))
        np.testing.assert_allclose(log_softmax(Tensor(x)).data,
                                   np.log(softmax(Tensor(x)).data), atol=1e-12)


class TestLogAddExp:
    def test_equal_args(self):
        assert np.isclose(log_add_exp(Tensor(0.0), Tensor(0.0)).data, np.log(2.0))

    def test_neg_inf_absorbing(self):
        out = log_add_exp(Tensor(-np.inf), Tensor(-3.7))
        assert np.isclose(out.data, -3.7)

    def test_deep_negative_stays_finite(self):
        out = log_add_exp(Tensor(-1000.0), Tensor(-1001.0))
        assert np.isclose(out.data, -1000.0 + np.log1p(np.exp(-1.0)))

    def test_commutative_associative(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a, b, c = rng.uniform(-50, 10, size=3)
            ab = log_add_exp(Tensor(a), Tensor(b)).data
            ba = log_add_exp(Tensor(b), Tensor(a)).data
            assert abs(ab - ba) <= 1e-12
            left = log_add_exp(Tensor(ab), Tensor(c)).data
            right = log_add_exp(Tensor(a), Tensor(log_add_exp(Tensor(b), Tensor(c)).data)).data
            assert abs(left - right) <= 1e-12

    def test_gradient_is_softmax_weight(self):
        a, b = parameter(0.2), parameter(-0.9)
        with Graph() as g:
            out = log_add_exp(a, b)
            g.backward(out)
        wa = np.exp(0.2) / (np.exp(0.2) + np.exp(-0.9))
        np.testing.assert_allclose(a.grad, wa, atol=1e-12)
        np.testing.assert_allclose(b.grad, 1 - wa, atol=1e-12)

    def test_gradient_with_neg_inf_branch(self):
        a, b = parameter(-np.inf), parameter(0.5)
        with Graph() as g:
            out = log_add_exp(a, b)
            g.backward(out)
        np.testing.assert_allclose(b.grad, 1.0)


class TestLayerNorm:
    def test_constant_row_maps_to_bias(self):
        x = Tensor(np.full((2, 4), 3.3))
        out = layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_row_stats(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(3, 16)))
        gain, bias = Tensor(np.full(16, 1.7)), Tensor(np.full(16, 0.4))
        out = layer_norm(x, gain, bias)
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.4, atol=1e-9)
        np.testing.assert_allclose(out.data.std(axis=-1), 1.7, rtol=1e-4)


class TestBackward:
    def test_sum_gives_ones(self):
        x = parameter(np.arange(6.0).reshape(2, 3))
        with Graph() as g:
            g.backward(tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_elementwise_square(self):
        x = parameter(np.array([1.0, 2.0]))
        with Graph() as g:
            g.backward(tsum(x * x))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_repeated_backward_accumulates(self):
        x = parameter(np.array([1.0, 2.0]))
        with Graph() as g:
            loss = tsum(x * x)
            g.backward(loss)
            g.backward(loss)
        np.testing.assert_array_equal(x.grad, [4.0, 8.0])
        zero_grad([x])
        assert x.grad is None

    def test_non_scalar_loss_rejected(self):
        x = parameter(np.array([1.0, 2.0]))
        with Graph() as g:
            y = x * x
            with pytest.raises(UsageError):
                g.backward(y)

    def test_free_function_requires_recorded_loss(self):
        with pytest.raises(UsageError):
            backward(Tensor(1.0))

    def test_diamond_reuse_sums_both_paths(self):
        x = parameter(np.array([3.0]))
        with Graph() as g:
            y = x * x + x * 2.0
            g.backward(tsum(y))
        np.testing.assert_array_equal(x.grad, [8.0])

    def test_broadcast_bias_gradient(self):
        w = parameter(np.zeros((3, 2)))
        b = parameter(np.zeros((2,)))
        with Graph() as g:
            out = tsum(matmul(Tensor(np.ones((4, 3))), w) + b)
            g.backward(out)
        np.testing.assert_array_equal(b.grad, [4.0, 4.0])

    def test_indexing_scatter_adds(self):
        x = parameter(np.array([1.0, 2.0, 3.0]))
        with Graph() as g:
            out = x[1] * 3.0 + x[1]
            g.backward(out)
        np.testing.assert_array_equal(x.grad, [0.0, 4.0, 0.0])

    def test_concat_and_stack_route_segments(self):
        a = parameter(np.array([[1.0, 2.0]]))
        b = parameter(np.array([[3.0, 4.0]]))
        with Graph() as g:
            out = tsum(concat([a, b], axis=1) * Tensor([[1.0, 2.0, 3.0, 4.0]]))
            g.backward(out)
        np.testing.assert_array_equal(a.grad, [[1.0, 2.0]])
        np.testing.assert_array_equal(b.grad, [[3.0, 4.0]])
        zero_grad([a, b])
        with Graph() as g:
            out = tsum(stack([a, b], axis=0) * Tensor([[[1.0, 1.0]], [[5.0, 5.0]]]))
            g.backward(out)
        np.testing.assert_array_equal(a.grad, [[1.0, 1.0]])
        np.testing.assert_array_equal(b.grad, [[5.0, 5.0]])

    def test_nothing_recorded_without_graph(self):
        x = parameter(np.array([1.0]))
        y = x * x
        assert y._graph is None and y._backward is None


class TestPrecision:
    def test_default_dtype_switch(self):
        tz.set_default_dtype(np.float32)
        try:
            assert Tensor([1.0]).data.dtype == np.float32
        finally:
            tz.set_default_dtype(np.float64)
        assert Tensor([1.0]).data.dtype == np.float64

    def test_bad_dtype_rejected(self):
        with pytest.raises(UsageError):
            tz.set_default_dtype(np.int32)
