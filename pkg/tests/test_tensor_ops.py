import numpy as np
import pytest

from volmetrics.errors import IndivisibleDims, ShapeMismatch
from volmetrics.nn.tensor import (
    Tensor,
    avg_pool3d,
    concat_channels,
    conv3d,
    div,
    dropout,
    finite_difference_check,
    max_pool3d,
    mean,
    mul,
    no_grad,
    relu,
    sqrt,
    stack_scalars,
    sub,
    sum_,
    take,
)

TOL = 1e-3


def leaf(shape, seed=0, scale=1.0, shift=0.0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.random(shape) * scale + shift, requires_grad=True)


class TestConv3d:
    def test_identity_kernel(self):
        x = leaf((4, 4, 4, 1), seed=1)
        w = Tensor(np.ones((1, 1, 1, 1, 1)), requires_grad=True)
        b = Tensor(np.array([0.25]), requires_grad=True)
        y = conv3d(x, w, b, stride=1, padding=0)
        assert np.allclose(y.data, x.data + 0.25)

    def test_zero_kernel_broadcasts_bias(self):
        x = leaf((4, 4, 4, 2), seed=2)
        w = Tensor(np.zeros((3, 3, 3, 2, 5)))
        b = Tensor(np.arange(5.0))
        y = conv3d(x, w, b)
        assert y.shape == (4, 4, 4, 5)
        assert np.allclose(y.data, np.broadcast_to(np.arange(5.0), (4, 4, 4, 5)))

    def test_gradcheck_stride1(self):
        x = leaf((4, 4, 4, 2), seed=3)
        w = leaf((3, 3, 3, 2, 3), seed=4, scale=0.5, shift=-0.25)
        b = leaf((3,), seed=5)
        target = np.random.default_rng(6).random((4, 4, 4, 3))

        def fn():
            y = conv3d(x, w, b)
            return sum_(mul(y, Tensor(target)))

        assert finite_difference_check(fn, [x, w, b]) < TOL

    def test_gradcheck_stride2_pad0(self):
        x = leaf((6, 6, 6, 2), seed=7)
        w = leaf((3, 3, 3, 2, 2), seed=8, scale=0.5, shift=-0.25)
        b = leaf((2,), seed=9)
        target = np.random.default_rng(10).random((2, 2, 2, 2))

        def fn():
            return sum_(mul(conv3d(x, w, b, stride=2, padding=0), Tensor(target)))

        assert finite_difference_check(fn, [x, w, b]) < TOL

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            conv3d(leaf((4, 4, 4, 2)), Tensor(np.zeros((3, 3, 3, 3, 4))), Tensor(np.zeros(4)))

    def test_translation_equivariance_interior(self):
        # circular-shifting the input shifts interior features identically
        rng = np.random.default_rng(11)
        x = rng.random((8, 8, 8, 2))
        w = Tensor(rng.random((3, 3, 3, 2, 3)) - 0.5)
        b = Tensor(rng.random(3))
        with no_grad():
            y0 = conv3d(Tensor(x), w, b).data
            y1 = conv3d(Tensor(np.roll(x, 2, axis=0)), w, b).data
        shifted = np.roll(y0, 2, axis=0)
        interior = (slice(3, -3),) * 1  # keep z rows far from the padded faces
        assert np.abs(y1[3:-3, 1:-1, 1:-1] - shifted[3:-3, 1:-1, 1:-1]).max() < 1e-5


class TestPooling:
    def test_avg_pool_constant(self):
        x = Tensor(np.full((4, 4, 4, 3), 0.7))
        y = avg_pool3d(x, 2)
        assert y.shape == (2, 2, 2, 3)
        assert np.allclose(y.data, 0.7)

    def test_avg_pool_gradcheck(self):
        x = leaf((4, 4, 4, 2), seed=12)
        target = np.random.default_rng(13).random((2, 2, 2, 2))

        def fn():
            return sum_(mul(avg_pool3d(x, 2), Tensor(target)))

        assert finite_difference_check(fn, [x]) < TOL

    def test_avg_pool_grad_uniform(self):
        x = leaf((2, 2, 2, 1), seed=14)
        y = sum_(avg_pool3d(x, 2))
        y.backward()
        assert np.allclose(x.grad, 1.0 / 8.0)

    def test_avg_pool_indivisible(self):
        with pytest.raises(IndivisibleDims):
            avg_pool3d(Tensor(np.zeros((5, 4, 4, 1))), 2)

    def test_max_pool_gradcheck(self):
        # distinct values keep the argmax stable under the fd perturbation
        rng = np.random.default_rng(15)
        vals = rng.permutation(6 * 6 * 6 * 2).astype(np.float64).reshape(6, 6, 6, 2)
        x = Tensor(vals * 0.1, requires_grad=True)
        target = np.random.default_rng(16).random((2, 2, 2, 2))

        def fn():
            return sum_(mul(max_pool3d(x, 4, 2), Tensor(target)))

        assert finite_difference_check(fn, [x]) < TOL


class TestElementwiseAndReduce:
    def test_relu_gradcheck_and_dead_zone(self):
        x = Tensor(np.array([-2.0, -0.5, 0.5, 2.0]), requires_grad=True)
        y = sum_(relu(x))
        y.backward()
        assert np.allclose(x.grad, [0, 0, 1, 1])
        assert np.allclose(relu(Tensor(np.array([-3.0]))).data, 0.0)

    def test_mixed_expression_gradcheck(self):
        a = leaf((5,), seed=17, shift=0.5)
        c = leaf((5,), seed=18, shift=1.5)

        def fn():
            return mean(div(mul(a, a), sqrt(c)))

        assert finite_difference_check(fn, [a, c]) < TOL

    def test_concat_gradcheck(self):
        a = leaf((3, 3, 3, 2), seed=19)
        c = leaf((3, 3, 3, 1), seed=20)
        target = np.random.default_rng(21).random((3, 3, 3, 3))

        def fn():
            return sum_(mul(concat_channels(a, c), Tensor(target)))

        assert finite_difference_check(fn, [a, c]) < TOL

    def test_stack_take_gradcheck(self):
        items = [leaf((), seed=30 + i, shift=0.2) for i in range(4)]
        vec = leaf((6,), seed=29)

        def fn():
            return sum_(mul(stack_scalars(items), Tensor(np.array([1.0, -2.0, 0.5, 3.0]))))

        assert finite_difference_check(fn, items) < TOL

        def fn2():
            return sum_(sub(take(vec, np.array([0, 2, 2, 5])), Tensor(np.ones(4))))

        assert finite_difference_check(fn2, [vec]) < TOL

    def test_dropout_rate_zero_identity(self):
        x = leaf((3, 3, 3, 4), seed=22)
        for training in (False, True):
            y = dropout(x, 0.0, training, rng=np.random.default_rng(0))
            assert np.array_equal(y.data, x.data)

    def test_dropout_off_path_gradcheck(self):
        x = leaf((3, 3, 3, 2), seed=23)
        target = np.random.default_rng(24).random((3, 3, 3, 2))

        def fn():
            return sum_(mul(dropout(x, 0.5, training=False), Tensor(target)))

        assert finite_difference_check(fn, [x]) < TOL

    def test_dropout_training_scaling(self):
        x = Tensor(np.ones((2, 2, 2, 64)), requires_grad=True)
        y = dropout(x, 0.5, training=True, rng=np.random.default_rng(25))
        kept = y.data[0, 0, 0]
        assert set(np.unique(kept)) <= {0.0, 2.0}

    def test_sqrt_zero_safe_gradient(self):
        x = Tensor(np.array([0.0]), requires_grad=True)
        y = sum_(sqrt(x))
        y.backward()
        assert np.all(np.isfinite(x.grad))

    def test_no_grad_builds_no_graph(self):
        x = leaf((4,), seed=26)
        with no_grad():
            y = mul(x, x)
        assert not y.requires_grad

    def test_grad_accumulates_across_backwards(self):
        x = leaf((3,), seed=27)
        sum_(mul(x, Tensor(np.ones(3)))).backward()
        sum_(mul(x, Tensor(np.ones(3)))).backward()
        assert np.allclose(x.grad, 2.0)
