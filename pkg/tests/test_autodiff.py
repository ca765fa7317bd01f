import numpy as np
import pytest

from motionwatch import autodiff as ad
from motionwatch.autodiff import Tensor, gradcheck, no_grad

N_CASES = 20


def rand(rng, *shape, avoid_zero=False):
    data = rng.normal(size=shape)
    if avoid_zero:
        # Keep values away from the ReLU kink so finite differences are valid.
        data = np.where(np.abs(data) < 0.1, np.sign(data) * 0.1 + data, data)
    return Tensor(data, requires_grad=True)


class TestElementwiseOps:
    def test_add_broadcast(self):
        rng = np.random.default_rng(0)
        for _ in range(N_CASES):
            a = rand(rng, 3, 4)
            b = rand(rng, 4)
            gradcheck(lambda ts: ad.sum_all(ad.add(ts[0], ts[1])), [a, b])

    def test_mul(self):
        rng = np.random.default_rng(1)
        for _ in range(N_CASES):
            a = rand(rng, 2, 5)
            b = rand(rng, 2, 5)
            gradcheck(lambda ts: ad.sum_all(ad.mul(ts[0], ts[1])), [a, b])

    def test_exp(self):
        rng = np.random.default_rng(2)
        for _ in range(N_CASES):
            a = rand(rng, 3, 3)
            gradcheck(lambda ts: ad.sum_all(ad.exp(ts[0])), [a])

    def test_square(self):
        rng = np.random.default_rng(3)
        for _ in range(N_CASES):
            a = rand(rng, 4, 2)
            gradcheck(lambda ts: ad.sum_all(ad.square(ts[0])), [a])

    def test_relu(self):
        rng = np.random.default_rng(4)
        for _ in range(N_CASES):
            a = rand(rng, 3, 5, avoid_zero=True)
            gradcheck(lambda ts: ad.sum_all(ad.relu(ts[0])), [a])

    def test_scalar_mul_and_neg(self):
        rng = np.random.default_rng(5)
        for _ in range(N_CASES):
            a = rand(rng, 6)
            gradcheck(lambda ts: ad.sum_all(-ts[0] * 2.5), [a])


class TestLinearOps:
    def test_matmul(self):
        rng = np.random.default_rng(6)
        for _ in range(N_CASES):
            a = rand(rng, 3, 4)
            b = rand(rng, 4, 2)
            gradcheck(lambda ts: ad.sum_all(ts[0] @ ts[1]), [a, b])

    def test_linear_layer_pattern(self):
        rng = np.random.default_rng(7)
        for _ in range(N_CASES):
            x = rand(rng, 2, 5)
            w = rand(rng, 5, 3)
            b = rand(rng, 3)
            gradcheck(lambda ts: ad.sum_all(ad.add(ts[0] @ ts[1], ts[2])), [x, w, b])


class TestShapeOps:
    def test_reshape(self):
        rng = np.random.default_rng(8)
        for _ in range(N_CASES):
            a = rand(rng, 2, 6)
            gradcheck(lambda ts: ad.sum_all(ad.square(ad.reshape(ts[0], (3, 4)))), [a])

    def test_concat(self):
        rng = np.random.default_rng(9)
        for _ in range(N_CASES):
            a = rand(rng, 2, 3, 2, 2)
            b = rand(rng, 2, 2, 2, 2)
            gradcheck(
                lambda ts: ad.sum_all(ad.square(ad.concat([ts[0], ts[1]], axis=1))), [a, b]
            )

    def test_broadcast_spatial(self):
        rng = np.random.default_rng(10)
        for _ in range(N_CASES):
            z = rand(rng, 2, 3)
            gradcheck(lambda ts: ad.sum_all(ad.square(ad.broadcast_spatial(ts[0], 3, 4))), [z])

    def test_global_mean_spatial(self):
        rng = np.random.default_rng(11)
        for _ in range(N_CASES):
            x = rand(rng, 2, 3, 4, 4)
            gradcheck(lambda ts: ad.sum_all(ad.square(ad.global_mean_spatial(ts[0]))), [x])


class TestConvPoolOps:
    def test_conv2d_padded(self):
        rng = np.random.default_rng(12)
        for _ in range(N_CASES):
            x = rand(rng, 2, 2, 5, 5)
            w = rand(rng, 3, 2, 3, 3)
            b = rand(rng, 3)
            gradcheck(
                lambda ts: ad.sum_all(ad.square(ad.conv2d(ts[0], ts[1], ts[2], padding=1))),
                [x, w, b],
            )

    def test_conv2d_1x1(self):
        rng = np.random.default_rng(13)
        for _ in range(N_CASES):
            x = rand(rng, 2, 4, 3, 3)
            w = rand(rng, 2, 4, 1, 1)
            gradcheck(lambda ts: ad.sum_all(ad.square(ad.conv2d(ts[0], ts[1]))), [x, w])

    def test_avg_pool2(self):
        rng = np.random.default_rng(14)
        for _ in range(N_CASES):
            x = rand(rng, 2, 3, 4, 6)
            gradcheck(lambda ts: ad.sum_all(ad.square(ad.avg_pool2(ts[0]))), [x])

    def test_upsample_nearest2(self):
        rng = np.random.default_rng(15)
        for _ in range(N_CASES):
            x = rand(rng, 2, 3, 3, 2)
            gradcheck(lambda ts: ad.sum_all(ad.square(ad.upsample_nearest2(ts[0]))), [x])


class TestLossOps:
    def test_mse(self):
        rng = np.random.default_rng(16)
        for _ in range(N_CASES):
            a = rand(rng, 2, 3, 4)
            b = rand(rng, 2, 3, 4)
            gradcheck(lambda ts: ad.mse(ts[0], ts[1]), [a, b])

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.mse(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


class TestEngine:
    def test_backward_requires_scalar(self):
        t = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            t.backward()

    def test_grad_accumulates_over_shared_subgraph(self):
        a = Tensor(np.array([2.0]), requires_grad=True)
        out = ad.sum_all(ad.add(ad.square(a), ad.square(a)))
        out.backward()
        assert a.grad == pytest.approx(2 * 2 * 2.0)

    def test_no_grad_suspends_graph(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = ad.square(a)
        assert not out.requires_grad
        assert out._parents == ()

    def test_gradients_finite_after_deep_chain(self):
        rng = np.random.default_rng(17)
        x = rand(rng, 1, 2, 8, 8)
        w1 = rand(rng, 4, 2, 3, 3)
        w2 = rand(rng, 2, 4, 3, 3)
        y = ad.conv2d(x, w1, padding=1)
        y = ad.relu(y)
        y = ad.avg_pool2(y)
        y = ad.upsample_nearest2(y)
        y = ad.conv2d(y, w2, padding=1)
        loss = ad.mse(y, Tensor(np.zeros(y.shape)))
        loss.backward()
        for t in (x, w1, w2):
            assert np.all(np.isfinite(t.grad))
