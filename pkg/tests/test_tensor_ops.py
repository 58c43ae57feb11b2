"""Forward semantics of the tensor ops: values, shapes, dtype rules, errors."""

import numpy as np
import pytest

from srnet.tensor import (
    DimensionError,
    Precision,
    Tensor,
    add_broadcast,
    concat_channels,
    conv2d,
    conv_transpose2d,
    div_broadcast,
    maxpool2d,
    mean_all,
    mul_broadcast,
    pointwise,
    reduce,
    relu,
    reshape,
    scalar,
    sigmoid,
    slice_channels,
    sub_broadcast,
    sum_all,
    use_precision,
)

from oracles import conv2d_ref, conv_transpose2d_ref, maxpool2d_ref


def rand(rng, shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape)


class TestTensorBasics:
    def test_rank_enforced(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((3, 4)))
        with pytest.raises(DimensionError):
            Tensor(np.zeros((1, 2, 3, 4, 5)))

    def test_default_dtype_follows_precision(self):
        t32 = Tensor([[[[1.0]]]])
        assert t32.dtype == np.float32
        with use_precision(Precision.CHECK64):
            t64 = Tensor([[[[1.0]]]])
        assert t64.dtype == np.float64

    def test_existing_float_dtype_kept(self):
        arr = np.zeros((1, 1, 2, 2), dtype=np.float64)
        assert Tensor(arr).dtype == np.float64

    def test_item_requires_scalar_shape(self):
        assert scalar(2.5).item() == pytest.approx(2.5)
        with pytest.raises(DimensionError):
            Tensor(np.zeros((1, 1, 1, 2))).item()

    def test_operators_accept_python_scalars(self):
        x = Tensor(np.full((1, 1, 2, 2), 3.0))
        assert np.allclose((x + 1).data, 4.0)
        assert np.allclose((x - 1).data, 2.0)
        assert np.allclose((x * 2).data, 6.0)
        assert np.allclose((x / 2).data, 1.5)
        assert np.allclose((-x).data, -3.0)


class TestBroadcastOps:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_against_numpy(self, seed):
        rng = np.random.default_rng(seed)
        a = rand(rng, (2, 3, 4, 5))
        b = rand(rng, (1, 3, 1, 5))
        d = rand(rng, (2, 1, 4, 1), lo=0.5, hi=2.0)
        assert np.array_equal(add_broadcast(Tensor(a), Tensor(b)).data, a + b)
        assert np.array_equal(sub_broadcast(Tensor(a), Tensor(b)).data, a - b)
        assert np.array_equal(mul_broadcast(Tensor(a), Tensor(b)).data, a * b)
        assert np.array_equal(div_broadcast(Tensor(a), Tensor(d)).data, a / d)

    def test_incompatible_shapes_rejected(self):
        a = Tensor(np.zeros((2, 3, 4, 5)))
        b = Tensor(np.zeros((2, 2, 4, 5)))
        with pytest.raises(DimensionError):
            add_broadcast(a, b)


class TestPointwise:
    def test_relu_values(self):
        x = Tensor(np.array([-2.0, -0.5, 0.0, 0.5, 2.0]).reshape(1, 1, 1, 5))
        assert np.array_equal(relu(x).data.ravel(), [0.0, 0.0, 0.0, 0.5, 2.0])

    def test_sigmoid_midpoint_and_symmetry(self):
        x = Tensor(np.array([[[[0.0, 2.0, -2.0]]]], dtype=np.float64))
        y = sigmoid(x).data.ravel()
        assert y[0] == pytest.approx(0.5)
        assert y[1] + y[2] == pytest.approx(1.0, abs=1e-12)

    def test_sigmoid_saturation_stays_in_open_interval(self):
        x = Tensor(np.array([[[[-500.0, 500.0]]]], dtype=np.float64))
        lo, hi = sigmoid(x).data.ravel()
        assert 1e-18 <= lo < 1e-12
        assert 1.0 - 1e-15 < hi <= 1.0 - 1e-16

    def test_unknown_fn_rejected(self):
        with pytest.raises(ValueError):
            pointwise(Tensor(np.zeros((1, 1, 1, 1))), "tanh")


class TestStructuralOps:
    def test_concat_then_slice_roundtrip(self):
        rng = np.random.default_rng(3)
        a = rand(rng, (2, 2, 3, 3))
        b = rand(rng, (2, 3, 3, 3))
        cat = concat_channels([Tensor(a), Tensor(b)])
        assert cat.shape == (2, 5, 3, 3)
        assert np.array_equal(slice_channels(cat, 0, 2).data, a)
        assert np.array_equal(slice_channels(cat, 2, 5).data, b)

    def test_concat_mismatched_spatial_rejected(self):
        with pytest.raises(DimensionError):
            concat_channels([Tensor(np.zeros((1, 1, 2, 2))),
                             Tensor(np.zeros((1, 1, 3, 2)))])

    def test_slice_bounds_checked(self):
        x = Tensor(np.zeros((1, 4, 2, 2)))
        with pytest.raises(DimensionError):
            slice_channels(x, 2, 6)
        with pytest.raises(DimensionError):
            slice_channels(x, 3, 3)

    def test_reshape_preserves_order_and_size(self):
        x = np.arange(24, dtype=np.float64).reshape(1, 2, 3, 4)
        y = reshape(Tensor(x), (2, 3, 2, 2))
        assert np.array_equal(y.data.ravel(), x.ravel())
        with pytest.raises(DimensionError):
            reshape(Tensor(x), (1, 1, 5, 5))


class TestReduce:
    def test_spatial_mean_frozen(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float64))
        assert reduce(x, "spatial", "mean").data.ravel()[0] == pytest.approx(2.5)

    def test_spatial_max_and_channel_stats(self):
        rng = np.random.default_rng(5)
        a = rand(rng, (2, 3, 4, 5))
        t = Tensor(a)
        assert np.allclose(reduce(t, "spatial", "max").data,
                           a.max(axis=(2, 3), keepdims=True))
        assert np.allclose(reduce(t, "channel", "mean").data,
                           a.mean(axis=1, keepdims=True))
        assert np.allclose(reduce(t, "channel", "max").data,
                           a.max(axis=1, keepdims=True))

    def test_bad_axis_or_stat(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ValueError):
            reduce(x, "depth", "mean")
        with pytest.raises(ValueError):
            reduce(x, "spatial", "median")

    def test_sum_and_mean_all(self):
        x = Tensor(np.arange(6, dtype=np.float64).reshape(1, 1, 2, 3))
        assert sum_all(x).item() == pytest.approx(15.0)
        assert mean_all(x).item() == pytest.approx(2.5)
        assert sum_all(x).shape == (1, 1, 1, 1)


class TestConv2d:
    def test_all_ones_3x3_frozen(self):
        # interior taps see the full 3x3 window, corners 4 cells, edges 6
        x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float64))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float64))
        out = conv2d(x, w, pad=1).data[0, 0]
        expected = np.array([[4.0, 6.0, 4.0], [6.0, 9.0, 6.0], [4.0, 6.0, 4.0]])
        assert np.array_equal(out, expected)

    @pytest.mark.parametrize("seed,stride,pad", [(0, 1, 0), (1, 1, 1), (2, 2, 1)])
    def test_matches_oracle(self, seed, stride, pad):
        rng = np.random.default_rng(seed)
        x = rand(rng, (2, 3, 6, 7))
        w = rand(rng, (4, 3, 3, 3))
        b = rand(rng, (1, 4, 1, 1))
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
        want = conv2d_ref(x, w, b, stride=stride, pad=pad)
        assert got.shape == want.shape
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_channel_mismatch_rejected(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(DimensionError):
            conv2d(x, w)

    def test_kernel_larger_than_padded_input_rejected(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        w = Tensor(np.zeros((1, 1, 5, 5)))
        with pytest.raises(DimensionError):
            conv2d(x, w)

    def test_bias_shape_checked(self):
        x = Tensor(np.zeros((1, 1, 4, 4)))
        w = Tensor(np.zeros((2, 1, 3, 3)))
        with pytest.raises(DimensionError):
            conv2d(x, w, Tensor(np.zeros((1, 3, 1, 1))))


class TestConvTranspose2d:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, (2, 3, 4, 5))
        w = rand(rng, (3, 2, 2, 2))
        b = rand(rng, (1, 2, 1, 1))
        got = conv_transpose2d(Tensor(x), Tensor(w), Tensor(b), stride=2).data
        want = conv_transpose2d_ref(x, w, b, stride=2)
        assert got.shape == (2, 2, 8, 10)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_output_size_law(self):
        x = Tensor(np.zeros((1, 2, 5, 5)))
        w = Tensor(np.zeros((2, 3, 4, 4)))
        out = conv_transpose2d(x, w, stride=3)
        assert out.shape == (1, 3, 16, 16)  # (5-1)*3 + 4

    def test_channel_mismatch_rejected(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 3, 2, 2)))
        with pytest.raises(DimensionError):
            conv_transpose2d(x, w)


class TestMaxPool2d:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, (2, 3, 6, 4))
        got = maxpool2d(Tensor(x), 2).data
        assert np.array_equal(got, maxpool2d_ref(x, 2))

    def test_indivisible_input_rejected(self):
        with pytest.raises(DimensionError):
            maxpool2d(Tensor(np.zeros((1, 1, 5, 4))), 2)

    def test_window_three(self):
        rng = np.random.default_rng(9)
        x = rand(rng, (1, 2, 6, 9))
        assert np.array_equal(maxpool2d(Tensor(x), 3).data, maxpool2d_ref(x, 3))


class TestPrecisionPropagation:
    def test_float64_inputs_stay_float64(self):
        x = Tensor(np.ones((1, 2, 4, 4), dtype=np.float64))
        w = Tensor(np.ones((1, 2, 3, 3), dtype=np.float64))
        assert conv2d(x, w).dtype == np.float64
        assert relu(x).dtype == np.float64

    def test_check64_context_builds_float64_ops(self):
        with use_precision(Precision.CHECK64):
            x = Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
            assert maxpool2d(x, 2).dtype == np.float64
