"""Autodiff engine tests: forward semantics plus finite-difference checks
for every primitive."""

import numpy as np
import pytest

from gradcheck import check_gradients, fd_gradient

import fus3d.tensor as T
from fus3d.tensor import Tensor, backward, no_grad


def rand(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


class TestForwardSemantics:
    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor(0.0)).item() == 0.5

    def test_sigmoid_saturation_is_stable(self):
        out = T.sigmoid(Tensor([-1000.0, 1000.0]))
        np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-12)

    def test_cosine_self_similarity(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            v = Tensor(rand(rng, 7) + 2.0)
            assert T.cosine_similarity(v, v).item() == pytest.approx(1.0, abs=1e-12)

    def test_cosine_zero_norm_is_zero(self):
        a = Tensor(np.zeros(4))
        b = Tensor(np.ones(4))
        assert T.cosine_similarity(a, b).item() == 0.0

    def test_conv2d_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = Tensor(rand(rng, 1, 1, 3, 3))
        kernel = Tensor(np.ones((1, 1, 1, 1)))
        out = T.conv2d(x, kernel)
        np.testing.assert_array_equal(out.data, x.data)

    def test_conv2d_shape_mismatch_names_both_shapes(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        w = Tensor(np.zeros((3, 5, 3, 3)))
        with pytest.raises(ValueError, match=r"\(1, 2, 4, 4\).*\(3, 5, 3, 3\)"):
            T.conv2d(x, w)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ValueError, match=r"\(2, 3\) vs \(4, 2\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_max_pool_values(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        out = T.max_pool2d(x, 2)
        np.testing.assert_array_equal(out.data.reshape(2, 2), [[5, 7], [13, 15]])

    def test_avg_pool_values(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        out = T.avg_pool2d(x, 2)
        np.testing.assert_array_equal(out.data.reshape(2, 2), [[2.5, 4.5], [10.5, 12.5]])

    def test_adaptive_pool_matches_full_mean(self):
        rng = np.random.default_rng(2)
        x = Tensor(rand(rng, 2, 3, 6, 6))
        out = T.adaptive_avg_pool2d(x, 1)
        np.testing.assert_allclose(
            out.data[..., 0, 0], x.data.mean(axis=(2, 3)), atol=1e-15
        )

    def test_concat_and_take_round_trip(self):
        a, b = Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 2)))
        joined = T.concat([a, b], axis=1)
        assert joined.shape == (2, 5)
        np.testing.assert_array_equal(joined[:, 3:].data, b.data)


class TestBroadcasting:
    @staticmethod
    def brute_force_broadcast(a, b, op):
        """Independent trailing-dimension alignment evaluator (<=3-d)."""
        ndim = max(a.ndim, b.ndim)
        sa = (1,) * (ndim - a.ndim) + a.shape
        sb = (1,) * (ndim - b.ndim) + b.shape
        out_shape = tuple(max(x, y) for x, y in zip(sa, sb))
        av, bv = a.reshape(sa), b.reshape(sb)
        out = np.empty(out_shape)
        for idx in np.ndindex(out_shape):
            ia = tuple(i if n > 1 else 0 for i, n in zip(idx, sa))
            ib = tuple(i if n > 1 else 0 for i, n in zip(idx, sb))
            out[idx] = op(av[ia], bv[ib])
        return out

    @pytest.mark.parametrize(
        "shape_a,shape_b",
        [((2, 1, 3), (3,)), ((4,), (2, 4)), ((2, 3), (2, 1)), ((1,), (2, 2, 2))],
    )
    def test_add_mul_match_scalar_evaluator(self, shape_a, shape_b):
        rng = np.random.default_rng(hash((shape_a, shape_b)) % 2**32)
        a, b = rand(rng, *shape_a), rand(rng, *shape_b)
        for op_t, op_s in [(T.add, lambda x, y: x + y), (T.mul, lambda x, y: x * y)]:
            got = op_t(Tensor(a), Tensor(b)).data
            expected = self.brute_force_broadcast(a, b, op_s)
            np.testing.assert_allclose(got, expected, atol=0)


class TestBackwardMechanics:
    def test_square_gradient_at_three(self):
        x = Tensor(3.0, requires_grad=True)
        backward(T.mul(x, x))
        assert x.grad == pytest.approx(6.0)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(T.mul(x, x))

    def test_repeated_backward_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        backward(T.mul(x, x))
        first = x.grad.copy()
        backward(T.mul(x, x))
        np.testing.assert_array_equal(x.grad, 2.0 * first)
        x.zero_grad()
        assert x.grad is None

    def test_shared_subexpression_gradient(self):
        # y = x*x used twice: d/dx (x*x + x*x) = 4x
        x = Tensor(1.5, requires_grad=True)
        y = T.mul(x, x)
        backward(T.add(y, y))
        assert x.grad == pytest.approx(6.0)

    def test_no_grad_suppresses_tape(self):
        x = Tensor(2.0, requires_grad=True)
        with no_grad():
            y = T.mul(x, x)
        assert not y.requires_grad
        with pytest.raises(ValueError):
            backward(y)

    def test_determinism_bit_identical(self):
        def run():
            rng = np.random.default_rng(123)
            x = Tensor(rng.standard_normal((2, 3, 5, 5)), requires_grad=True)
            w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
            out = T.tanh(T.conv2d(x, w, padding=1, stride=2))
            backward(T.tensor_sum(T.mul(out, out)))
            return out.data.copy(), x.grad.copy(), w.grad.copy()

        first, second = run(), run()
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)


class TestPrimitiveGradients:
    """Central-difference checks, step 1e-5, relative error < 1e-4."""

    def setup_method(self):
        self.rng = np.random.default_rng(99)

    def test_add(self):
        check_gradients(lambda t: T.add(t[0], t[1]),
                        [rand(self.rng, 2, 3), rand(self.rng, 3)])

    def test_sub(self):
        check_gradients(lambda t: T.sub(t[0], t[1]),
                        [rand(self.rng, 4), rand(self.rng, 2, 4)])

    def test_mul(self):
        check_gradients(lambda t: T.mul(t[0], t[1]),
                        [rand(self.rng, 2, 3), rand(self.rng, 2, 1)])

    def test_div(self):
        denom = rand(self.rng, 3) + np.sign(rand(self.rng, 3)) * 1.5
        check_gradients(lambda t: T.div(t[0], t[1]), [rand(self.rng, 2, 3), denom])

    def test_matmul(self):
        check_gradients(lambda t: T.matmul(t[0], t[1]),
                        [rand(self.rng, 3, 4), rand(self.rng, 4, 2)])

    def test_matmul_batched_broadcast(self):
        check_gradients(lambda t: T.matmul(t[0], t[1]),
                        [rand(self.rng, 2, 3, 4), rand(self.rng, 4, 2)])

    def test_reshape_transpose(self):
        check_gradients(
            lambda t: T.transpose(T.reshape(t[0], (3, 4)), (1, 0)),
            [rand(self.rng, 2, 6)],
        )

    def test_broadcast_to(self):
        check_gradients(lambda t: T.broadcast_to(t[0], (4, 2, 3)),
                        [rand(self.rng, 2, 3)])

    def test_concat(self):
        check_gradients(
            lambda t: T.concat(t, axis=1),
            [rand(self.rng, 2, 2), rand(self.rng, 2, 3)],
        )

    def test_stack(self):
        check_gradients(
            lambda t: T.stack(t, axis=1),
            [rand(self.rng, 2, 3), rand(self.rng, 2, 3)],
        )

    def test_take_basic_slice(self):
        check_gradients(lambda t: t[0][:, 1:3], [rand(self.rng, 3, 4)])

    def test_take_advanced_with_repeats(self):
        idx = np.array([0, 2, 2, 1])
        check_gradients(lambda t: t[0][idx], [rand(self.rng, 3, 2)])

    def test_sum_axis(self):
        check_gradients(lambda t: T.tensor_sum(t[0], axis=1), [rand(self.rng, 3, 4)])

    def test_mean_all(self):
        check_gradients(lambda t: T.tensor_mean(t[0]), [rand(self.rng, 2, 3)])

    def test_mean_axis_keepdims(self):
        check_gradients(
            lambda t: T.tensor_mean(t[0], axis=(0, 2), keepdims=True),
            [rand(self.rng, 2, 3, 2)],
        )

    def test_reduce_max(self):
        x = rand(self.rng, 3, 5)  # distinct values almost surely
        check_gradients(lambda t: T.reduce_max(t[0], axis=1), [x])

    def test_relu(self):
        x = rand(self.rng, 12)
        x[np.abs(x) < 0.05] = 0.5  # keep away from the kink
        check_gradients(lambda t: T.relu(t[0]), [x])

    def test_sigmoid(self):
        check_gradients(lambda t: T.sigmoid(t[0]), [rand(self.rng, 9)])

    def test_tanh(self):
        check_gradients(lambda t: T.tanh(t[0]), [rand(self.rng, 9)])

    def test_abs(self):
        x = rand(self.rng, 10)
        x[np.abs(x) < 0.05] = -0.3
        check_gradients(lambda t: T.tensor_abs(t[0]), [x])

    def test_sqrt(self):
        check_gradients(lambda t: T.sqrt(t[0]), [rand(self.rng, 8) + 1.5])

    def test_conv2d(self):
        check_gradients(
            lambda t: T.conv2d(t[0], t[1], t[2], stride=2, padding=1),
            [rand(self.rng, 2, 3, 5, 5), rand(self.rng, 4, 3, 3, 3),
             rand(self.rng, 4)],
        )

    def test_conv2d_no_pad(self):
        check_gradients(
            lambda t: T.conv2d(t[0], t[1]),
            [rand(self.rng, 1, 2, 4, 4), rand(self.rng, 3, 2, 2, 2)],
        )

    def test_max_pool(self):
        check_gradients(lambda t: T.max_pool2d(t[0], 2), [rand(self.rng, 2, 2, 4, 4)])

    def test_avg_pool(self):
        check_gradients(
            lambda t: T.avg_pool2d(t[0], 2, stride=1), [rand(self.rng, 1, 2, 4, 4)]
        )

    def test_adaptive_avg_pool_divisible(self):
        check_gradients(
            lambda t: T.adaptive_avg_pool2d(t[0], 2), [rand(self.rng, 1, 2, 4, 4)]
        )

    def test_adaptive_avg_pool_uneven(self):
        check_gradients(
            lambda t: T.adaptive_avg_pool2d(t[0], 2), [rand(self.rng, 1, 1, 5, 5)]
        )

    def test_cosine_similarity_full(self):
        check_gradients(
            lambda t: T.cosine_similarity(t[0], t[1]),
            [rand(self.rng, 6) + 2.0, rand(self.rng, 6) + 2.0],
        )

    def test_cosine_similarity_axis(self):
        check_gradients(
            lambda t: T.cosine_similarity(t[0], t[1], axis=(1, 2)),
            [rand(self.rng, 3, 2, 2) + 1.0, rand(self.rng, 3, 2, 2) + 1.0],
        )


class TestCosineHandDerived:
    def test_gradient_at_orthogonal_unit_vectors(self):
        # For unit-norm orthogonal a, b: d cos/da = b, d cos/db = a.
        a = Tensor(np.array([1.0, 0.0]), requires_grad=True)
        b = Tensor(np.array([0.0, 1.0]), requires_grad=True)
        backward(T.cosine_similarity(a, b))
        np.testing.assert_allclose(a.grad, [0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(b.grad, [1.0, 0.0], atol=1e-12)
