"""Tensor op semantics against naive independent oracles, plus autodiff checks."""

import numpy as np
import pytest

from txir import tensor as T
from txir.gradcheck import gradcheck
from txir.tensor import Tensor, ShapeError, NumericsError


# ---------------------------------------------------------------------------
# oracles: deliberately naive loop implementations, independent of the package
# ---------------------------------------------------------------------------

def conv2d_oracle(x, w, b, stride=1, pad=0):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(k):
                            for kj in range(k):
                                acc += xp[ni, ci, i * stride + ki, j * stride + kj] * w[co, ci, ki, kj]
                    out[ni, co, i, j] = acc + b[co]
    return out


def dwconv2d_oracle(x, w):
    n, c, h, wd = x.shape
    k = w.shape[2]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros_like(x)
    for ni in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(wd):
                    acc = 0.0
                    for ki in range(k):
                        for kj in range(k):
                            acc += xp[ni, ci, i + ki, j + kj] * w[ci, 0, ki, kj]
                    out[ni, ci, i, j] = acc
    return out


def linear_oracle(x, w, b):
    n, din = x.shape
    dout = w.shape[0]
    out = np.zeros((n, dout))
    for i in range(n):
        for o in range(dout):
            acc = 0.0
            for d in range(din):
                acc += x[i, d] * w[o, d]
            out[i, o] = acc + b[o]
    return out


def upsample2x_oracle(x):
    """Per-pixel half-pixel-center bilinear interpolation."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w))
    for i in range(2 * h):
        for j in range(2 * w):
            sy = (i + 0.5) / 2 - 0.5
            sx = (j + 0.5) / 2 - 0.5
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            ty, tx = sy - y0, sx - x0
            y0c, y1c = np.clip([y0, y0 + 1], 0, h - 1)
            x0c, x1c = np.clip([x0, x0 + 1], 0, w - 1)
            out[:, :, i, j] = ((1 - ty) * (1 - tx) * x[:, :, y0c, x0c]
                               + (1 - ty) * tx * x[:, :, y0c, x1c]
                               + ty * (1 - tx) * x[:, :, y1c, x0c]
                               + ty * tx * x[:, :, y1c, x1c])
    return out


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((2, 3, 5, 5)))
        w = np.zeros((3, 3, 1, 1))
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        out = T.conv2d(x, Tensor(w), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_ones_kernel_center(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, w, Tensor(np.zeros(1)), pad=1)
        assert out.data[0, 0, 1, 1] == 9.0

    @pytest.mark.parametrize("seed,stride,pad", [(0, 1, 0), (1, 1, 1), (2, 2, 1), (3, 1, 2)])
    def test_against_loop_oracle(self, seed, stride, pad):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 4, 5, 5))
        w = rng.standard_normal((3, 4, 3, 3))
        b = rng.standard_normal(3)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
        np.testing.assert_allclose(out.data, conv2d_oracle(x, w, b, stride, pad),
                                   rtol=1e-12, atol=1e-12)

    def test_shape_errors(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        with pytest.raises(ShapeError):
            T.conv2d(x, Tensor(np.zeros((2, 4, 3, 3))), Tensor(np.zeros(2)), pad=1)
        with pytest.raises(ShapeError):
            T.conv2d(x, Tensor(np.zeros((2, 3, 2, 2))), Tensor(np.zeros(2)))  # even kernel
        with pytest.raises(ShapeError):
            T.conv2d(x, Tensor(np.zeros((2, 3, 3, 3))), Tensor(np.zeros(5)), pad=1)


class TestDwconv2d:
    def test_identity_kernels(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)))
        w = np.zeros((3, 1, 3, 3))
        w[:, 0, 1, 1] = 1.0
        out = T.dwconv2d(x, Tensor(w))
        np.testing.assert_array_equal(out.data, x.data)

    def test_channel_independence(self):
        rng = np.random.default_rng(2)
        x = np.zeros((1, 2, 6, 6))
        x[0, 0] = rng.standard_normal((6, 6))
        out = T.dwconv2d(Tensor(x), Tensor(rng.standard_normal((2, 1, 3, 3))))
        assert np.all(out.data[0, 1] == 0.0)
        assert np.any(out.data[0, 0] != 0.0)

    @pytest.mark.parametrize("seed,k", [(0, 3), (1, 5), (2, 3)])
    def test_against_loop_oracle(self, seed, k):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((3, 1, k, k))
        out = T.dwconv2d(Tensor(x), Tensor(w))
        np.testing.assert_allclose(out.data, dwconv2d_oracle(x, w), rtol=1e-12, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.dwconv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 1, 3, 3))))


class TestLinear:
    def test_identity(self):
        x = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3))
        out = T.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_hand_case(self):
        out = T.linear(Tensor([[1.0, 2.0]]), Tensor([[1.0, 1.0]]), Tensor([1.0]))
        assert out.data.tolist() == [[4.0]]

    @pytest.mark.parametrize("seed", range(3))
    def test_against_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((4, 7))
        w = rng.standard_normal((5, 7))
        b = rng.standard_normal(5)
        out = T.linear(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, linear_oracle(x, w, b), rtol=1e-12, atol=1e-12)

    def test_inner_dim_mismatch(self):
        with pytest.raises(ShapeError):
            T.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(4)))


class TestGap:
    def test_constant(self):
        out = T.gap(Tensor(np.full((2, 3, 4, 5), 2.5)))
        np.testing.assert_array_equal(out.data, np.full((2, 3, 1, 1), 2.5))

    def test_hand_case(self):
        out = T.gap(Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)))
        assert out.data.reshape(-1)[0] == 2.5

    def test_against_sum_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 4, 3, 5))
        out = T.gap(Tensor(x))
        expected = np.zeros((2, 4, 1, 1))
        for n in range(2):
            for c in range(4):
                expected[n, c, 0, 0] = sum(x[n, c, i, j] for i in range(3) for j in range(5)) / 15
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)


class TestElementwise:
    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_relu(self):
        out = T.relu(Tensor([-3.0, 3.0]))
        assert out.data.tolist() == [0.0, 3.0]

    def test_broadcast_mul_gains(self):
        gains = Tensor(np.array([2.0, 3.0]).reshape(1, 2, 1, 1))
        out = T.mul(Tensor(np.ones((1, 2, 3, 3))), gains)
        assert np.all(out.data[0, 0] == 2.0) and np.all(out.data[0, 1] == 3.0)

    def test_broadcast_vector_over_map(self):
        out = T.mul(Tensor(np.ones((2, 3, 2, 2))), Tensor(np.array([1.0, 2.0, 3.0])))
        for c, g in enumerate((1.0, 2.0, 3.0)):
            assert np.all(out.data[:, c] == g)

    def test_reject_general_broadcast(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.ones((2, 3, 4, 4))), Tensor(np.ones((2, 3, 4, 1))))
        with pytest.raises(ShapeError):
            T.mul(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))

    def test_nan_is_error(self):
        big = Tensor([1e30])
        with pytest.raises(NumericsError):
            T.mul(big, big)  # overflows float32 -> inf
        with pytest.raises(NumericsError):
            Tensor([np.nan])


class TestConcatSplit:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((2, 6, 3, 3)))
        a, b = T.split(x)
        back = T.concat([a, b])
        assert back.data.tobytes() == x.data.tobytes()

    def test_split_preserves_order(self):
        x = Tensor(np.arange(4, dtype=np.float64).reshape(1, 4, 1, 1))
        a, b = T.split(x)
        assert a.data.reshape(-1).tolist() == [0.0, 1.0]
        assert b.data.reshape(-1).tolist() == [2.0, 3.0]

    def test_concat_channel_counts(self):
        a = Tensor(np.zeros((1, 3, 2, 2)))
        b = Tensor(np.zeros((1, 5, 2, 2)))
        assert T.concat([a, b]).shape == (1, 8, 2, 2)

    def test_split_odd_channels(self):
        with pytest.raises(ShapeError):
            T.split(Tensor(np.zeros((1, 5, 2, 2))))


class TestUpsample2x:
    def test_constant(self):
        out = T.upsample2x(Tensor(np.full((1, 2, 3, 3), 7.0)))
        np.testing.assert_allclose(out.data, np.full((1, 2, 6, 6), 7.0), rtol=1e-12)

    def test_single_pixel(self):
        out = T.upsample2x(Tensor(np.array([[[[5.0]]]])))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 5.0))

    @pytest.mark.parametrize("seed,shape", [(0, (1, 1, 2, 2)), (1, (2, 3, 4, 5)), (2, (1, 2, 7, 3))])
    def test_against_interpolation_oracle(self, seed, shape):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(shape)
        out = T.upsample2x(Tensor(x))
        np.testing.assert_allclose(out.data, upsample2x_oracle(x), rtol=1e-10, atol=1e-12)


class TestBackward:
    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        y = T.mul(x, x)
        with pytest.raises(ShapeError):
            T.backward(y)

    def test_linear_function_grad_exact(self):
        # f = sum(c * x): gradient must be exactly c
        c = np.array([2.0, -3.0, 0.5])
        x = Tensor(np.array([1.0, 4.0, -2.0]), requires_grad=True)
        T.backward(T.tensor_sum(T.mul(Tensor(c), x)))
        np.testing.assert_array_equal(x.grad, c)

    def test_grad_accumulates_across_calls(self):
        x = Tensor(np.ones(3), requires_grad=True)
        T.backward(T.tensor_sum(x))
        T.backward(T.tensor_sum(x))
        np.testing.assert_array_equal(x.grad, np.full(3, 2.0))

    def test_graph_cleared_after_backward(self):
        x = Tensor(np.ones(3), requires_grad=True)
        T.backward(T.tensor_sum(x))
        assert len(T._graph().nodes) == 0

    def test_shared_subexpression(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = T.mul(x, x)
        loss = T.tensor_sum(T.add(y, y))
        T.backward(loss)
        np.testing.assert_allclose(x.grad, [8.0])  # d/dx 2x^2 = 4x


class TestGradcheckBattery:
    def test_sigmoid_gradcheck_tight(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((3, 4)))
        err = gradcheck(lambda x: T.tensor_sum(T.sigmoid(x)), [x], eps=1e-5)
        assert err < 1e-6

    def test_conv_gradcheck(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((1, 2, 5, 5)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        b = Tensor(rng.standard_normal(3))
        err = gradcheck(lambda *a: T.tensor_sum(T.conv2d(*a, stride=1, pad=1)), [x, w, b])
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(20))
    def test_random_shapes_all_ops(self, seed):
        # >= 20 random shape/seed combinations through a pipeline touching
        # every differentiable op
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 3)) * 2
        h = int(rng.integers(2, 5))
        x = Tensor(rng.standard_normal((n, c, h, h)))
        w = Tensor(rng.standard_normal((c, c, 3, 3)) * 0.4)
        b = Tensor(rng.standard_normal(c) * 0.1)
        dw = Tensor(rng.standard_normal((c, 1, 3, 3)) * 0.4)
        gains = Tensor(rng.standard_normal((n, c, 1, 1)))
        wl = Tensor(rng.standard_normal((3, c)) * 0.4)
        bl = Tensor(rng.standard_normal(3) * 0.1)
        denom = Tensor(rng.standard_normal(()) + 4.0)

        def f(x, w, b, dw, gains, wl, bl, denom):
            y = T.conv2d(x, w, b, pad=1)
            y = T.relu(y)
            y = T.dwconv2d(y, dw)
            y = T.mul(y, gains)
            y = T.upsample2x(y)
            lo, hi = T.split(y)
            y = T.concat([T.sigmoid(lo), hi])
            y = T.add(y, T.gap(y))
            z = T.linear(T.reshape(T.gap(y), (n, c)), wl, bl)
            pooled = T.div(T.sub(T.tensor_sum(y), T.tensor_sum(z)), denom)
            return T.add(pooled, T.tensor_sum(T.broadcast_hw(T.gap(y), 2, 2)))

        assert gradcheck(f, [x, w, b, dw, gains, wl, bl, denom]) < 1e-4


class TestConcurrentGraphs:
    def test_independent_tapes_per_thread(self):
        # each thread records on its own tape; gradients stay separated
        import threading
        results = {}

        def worker(tag, scale):
            x = Tensor(np.full(4, scale), requires_grad=True)
            T.backward(T.tensor_sum(T.mul(x, x)))
            results[tag] = x.grad.copy()

        threads = [threading.Thread(target=worker, args=(i, float(i + 1)))
                   for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for i in range(4):
            np.testing.assert_allclose(results[i], np.full(4, 2.0 * (i + 1)))


class TestDeterminismAndSerialization:
    def test_forward_deterministic(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 4, 6, 6))
        w = rng.standard_normal((4, 4, 3, 3))
        b = rng.standard_normal(4)
        r1 = T.conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1)
        r2 = T.conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1)
        assert r1.data.tobytes() == r2.data.tobytes()

    def test_tensor_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        t = Tensor(rng.standard_normal((2, 3, 4)).astype(np.float32))
        path = tmp_path / "t.txir"
        T.write_tensor(t, path)
        back = T.read_tensor(path)
        assert back.shape == t.shape
        assert back.data.tobytes() == t.data.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.txir"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(T.TxirError):
            T.read_tensor(path)

    def test_float64_mode(self):
        with T.float64_mode():
            t = Tensor([1.0])
            assert t.dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32
