import numpy as np
import pytest

from pixel_transfer.autodiff import (
    Adam,
    BatchNorm2d,
    BatchNormWarning,
    MissingGradientError,
    SGDMomentum,
    Tensor,
    batch_norm2d,
    finite_difference_check,
)


class TestBatchNorm:
    def test_constant_input_gives_zero(self):
        bn = BatchNorm2d(2)
        out = bn(Tensor(np.full((3, 2, 4, 4), 7.0, dtype=np.float32)), training=True)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_output_statistics(self):
        rng = np.random.default_rng(0)
        x = rng.normal(3.0, 5.0, size=(16, 4, 8, 8))
        out = BatchNorm2d(4, dtype=np.float64)(Tensor(x), training=True).data
        assert np.all(np.abs(out.mean(axis=(0, 2, 3))) < 1e-5)
        assert np.all(np.abs(out.var(axis=(0, 2, 3)) - 1.0) < 1e-3)

    def test_running_stats_update(self):
        rng = np.random.default_rng(1)
        x = rng.normal(2.0, 3.0, size=(8, 3, 5, 5))
        bn = BatchNorm2d(3, dtype=np.float64)
        bn(Tensor(x), training=True)
        np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-12)
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), rtol=1e-12)
        assert bn.updates == 1
        bn(Tensor(x), training=True, update_stats=False)
        assert bn.updates == 1

    def test_eval_is_definitional(self):
        rng = np.random.default_rng(2)
        bn = BatchNorm2d(3, dtype=np.float64)
        bn.running_mean[:] = [0.5, -1.0, 2.0]
        bn.running_var[:] = [0.25, 4.0, 1.5]
        bn.gamma.data[:] = [1.5, 0.5, -1.0]
        bn.beta.data[:] = [0.1, 0.2, 0.3]
        bn.updates = 1
        x = rng.normal(size=(2, 3, 4, 4))
        r = lambda a: a.reshape(1, 3, 1, 1)  # noqa: E731
        expect = r(bn.gamma.data) * (x - r(bn.running_mean)) / np.sqrt(r(bn.running_var) + 1e-5) + r(bn.beta.data)
        np.testing.assert_allclose(bn(Tensor(x), training=False).data, expect, rtol=1e-12)

    def test_eval_before_update_warns(self):
        bn = BatchNorm2d(1)
        x = np.random.default_rng(3).normal(size=(1, 1, 2, 2)).astype(np.float32)
        with pytest.warns(BatchNormWarning):
            out = bn(Tensor(x), training=False).data
        np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-6)

    def test_eval_is_pure(self):
        bn = BatchNorm2d(2)
        bn.updates = 3
        x = Tensor(np.ones((1, 2, 3, 3), dtype=np.float32))
        a = bn(x, training=False).data.copy()
        b = bn(x, training=False).data
        np.testing.assert_array_equal(a, b)
        assert bn.updates == 3

    def test_train_needs_two_values(self):
        with pytest.raises(ValueError):
            BatchNorm2d(2)(Tensor(np.zeros((1, 2, 1, 1))), training=True)

    def test_gradient(self):
        bn = BatchNorm2d(4, dtype=np.float64)
        rng = np.random.default_rng(4)
        bn.gamma.data[:] = rng.uniform(0.5, 1.5, 4)
        x = Tensor(rng.normal(size=(8, 4, 6, 6)), requires_grad=True)
        err = finite_difference_check(lambda a, g, b: batch_norm2d(a, bn, training=True), [x, bn.gamma, bn.beta])
        assert err < 1e-3

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            BatchNorm2d(3)(Tensor(np.zeros((2, 2, 2, 2))))


class TestSGD:
    def test_worked_example(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = SGDMomentum({"p": p}, lr=0.1, momentum=0.5)
        p.grad = np.array([1.0])
        opt.step()
        assert opt.velocity["p"][0] == pytest.approx(1.0)
        assert p.data[0] == pytest.approx(0.9)
        p.grad = np.array([1.0])
        opt.step()
        assert opt.velocity["p"][0] == pytest.approx(1.5)
        assert p.data[0] == pytest.approx(0.75)

    def test_geometric_decay(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = SGDMomentum({"p": p}, lr=0.1, momentum=0.5)
        p.grad = np.array([1.0])
        opt.step()
        for k in range(1, 5):
            before = p.data[0]
            p.grad = np.array([0.0])
            opt.step()
            assert opt.velocity["p"][0] == pytest.approx(0.5**k)
            assert before - p.data[0] == pytest.approx(0.1 * 0.5**k)

    def test_buffers_start_at_zero(self):
        ps = {"a": Tensor(np.ones((2, 3)), requires_grad=True), "b": Tensor(np.ones(4), requires_grad=True)}
        opt = SGDMomentum(ps, lr=0.1)
        assert set(opt.buffers()) == {"velocity/a", "velocity/b"}
        assert all(not v.any() and v.shape == ps[k.split("/")[1]].shape for k, v in opt.buffers().items())

    def test_missing_grad(self):
        p = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(MissingGradientError, match="p"):
            SGDMomentum({"p": p}, lr=0.1).step()


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01)
    p.grad = np.array([0.3, -5.0])
    opt.step()
    # bias correction makes the first step lr * sign(g)
    np.testing.assert_allclose(p.data, [0.99, -0.99], rtol=1e-6)
    assert opt.steps == 1
