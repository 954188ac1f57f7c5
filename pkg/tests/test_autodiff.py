import math

import numpy as np
import pytest

from pixel_transfer.autodiff import (
    ComputationRecord,
    Tensor,
    activation,
    binary_cross_entropy,
    concat,
    finite_difference_check,
    leaky_relu,
    mse_loss,
    mul,
    no_grad,
    relu,
    sigmoid,
    tanh,
    where_items,
)


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


class TestTensor:
    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32
        assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64

    def test_item_needs_scalar(self):
        assert Tensor(3.0).item() == 3.0
        with pytest.raises(ValueError):
            Tensor([1.0, 2.0]).item()

    def test_values_length_matches_shape(self):
        x = Tensor(np.ones((2, 3, 4)))
        assert x.size == math.prod(x.shape) == x.data.reshape(-1).size


class TestBackward:
    def test_sum_gives_ones(self):
        x = t64(np.random.default_rng(0).normal(size=(3, 4)))
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_sigmoid_at_zero(self):
        x = t64(0.0)
        sigmoid(x).backward()
        assert x.grad == pytest.approx(0.25, abs=1e-15)

    def test_accumulates_across_uses(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4,))
        x = t64(a)
        y = (x * x).sum() + (x * 3.0).sum()
        y.backward()
        x1, x2 = t64(a), t64(a)
        (x1 * x1).sum().backward()
        (x2 * 3.0).sum().backward()
        np.testing.assert_array_equal(x.grad, x1.grad + x2.grad)

    def test_leaf_grads_accumulate_between_calls(self):
        x = t64([1.0, 2.0])
        x.sum().backward()
        (x * 2.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [3.0, 3.0])

    def test_second_backward_rejected(self):
        x = t64([1.0, 2.0])
        y = (x * x).sum()
        y.backward()
        with pytest.raises(RuntimeError):
            y.backward()

    def test_non_scalar_needs_seed(self):
        x = t64([1.0, 2.0])
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_record_visits_each_node_once(self):
        x = t64([1.0, -2.0])
        h = relu(x)
        y = (h * h + h).sum()
        record = ComputationRecord.from_output(y)
        assert len(record.nodes) == len({id(n) for n in record.nodes})
        # relu feeds both branches, so it must come before both consumers
        names = record.op_names()
        assert names[0] == "relu" and names[-1] == "sum"
        assert sorted(names) == ["add", "mul", "relu", "sum"]

    def test_every_reachable_leaf_gets_grad(self):
        a, b, c = t64([1.0]), t64([2.0]), t64([3.0])
        ((a * b) + concat([c.reshape(1, 1), a.reshape(1, 1)], axis=1).sum()).sum().backward()
        assert all(v.grad is not None for v in (a, b, c))

    def test_no_grad_records_nothing(self):
        x = t64([1.0])
        with no_grad():
            y = x * 2.0
        assert y.node is None and not y.requires_grad

    def test_grad_flags_fixed_at_record_time(self):
        w = t64([2.0], grad=False)
        x = t64([3.0])
        y = (w * x).sum()
        w.requires_grad = True
        y.backward()
        assert w.grad is None and x.grad[0] == 2.0

    def test_where_items_routes_grads(self):
        a, b = t64(np.ones((3, 2))), t64(np.ones((3, 2)))
        where_items(np.array([True, False, True]), a, b).sum().backward()
        np.testing.assert_array_equal(a.grad[:, 0], [1, 0, 1])
        np.testing.assert_array_equal(b.grad[:, 0], [0, 1, 0])

    def test_graph_is_freed_with_the_loss(self):
        import gc
        import weakref

        x = t64(np.ones(1000))
        gc.disable()
        try:
            y = x * 2.0
            canary = weakref.ref(y.data)
            del y
            # no tensor/node reference cycle, so refcounting alone frees it
            assert canary() is None
        finally:
            gc.enable()


class TestActivations:
    def test_leaky_relu_slope(self):
        assert leaky_relu(Tensor(np.array([-1.0])), 0.2).item() == pytest.approx(-0.2)
        assert leaky_relu(Tensor(np.array([2.0])), 0.2).item() == 2.0

    def test_sigmoid_tanh_at_zero(self):
        assert sigmoid(Tensor(np.array([0.0]))).item() == 0.5
        assert tanh(Tensor(np.array([0.0]))).item() == 0.0

    def test_ranges(self):
        x = Tensor(np.linspace(-15, 15, 101))
        s, th = sigmoid(x).data, tanh(x).data
        assert np.all((s > 0) & (s < 1)) and np.all((th > -1) & (th < 1))

    def test_dispatch(self):
        x = Tensor(np.array([-1.0, 1.0]))
        np.testing.assert_array_equal(activation(x, "relu").data, [0.0, 1.0])
        assert activation(x, None) is x
        with pytest.raises(ValueError):
            activation(x, "gelu")


class TestLosses:
    def test_bce_values(self):
        assert binary_cross_entropy(t64(0.5), 1.0).item() == pytest.approx(math.log(2), abs=1e-12)
        assert binary_cross_entropy(t64(0.9), 0.0).item() == pytest.approx(-math.log(0.1), abs=1e-12)

    def test_bce_grad(self):
        p = t64(0.5)
        binary_cross_entropy(p, 1.0).backward()
        assert p.grad == pytest.approx(-2.0, abs=1e-12)

    def test_bce_clamps(self):
        p = t64([0.0, 1.0])
        out = binary_cross_entropy(p, np.array([1.0, 0.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, -math.log(1e-7), rtol=1e-9)

    def test_bce_nonnegative(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(1e-6, 1 - 1e-6, 1000)
        t = rng.integers(0, 2, 1000).astype(float)
        assert np.all(binary_cross_entropy(t64(p), t).data >= 0)

    def test_mse(self):
        a = np.full((2, 3), -1.0)
        assert mse_loss(t64(a), a).item() == 0.0
        assert mse_loss(t64(a), -a).item() == 4.0
        with pytest.raises(ValueError):
            mse_loss(t64(a), np.zeros((3, 2)))

    def test_mse_gradient_formula(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
        x = t64(a)
        mse_loss(x, b).backward()
        np.testing.assert_allclose(x.grad, 2 * (a - b) / a.size, rtol=1e-12)


class TestGradcheck:
    def test_tanh(self):
        x = t64(np.random.default_rng(0).normal(size=(4, 4)))
        assert finite_difference_check(tanh, [x]) < 1e-6

    def test_mul_both_inputs(self):
        rng = np.random.default_rng(1)
        assert finite_difference_check(mul, [t64(rng.normal(size=5)), t64(rng.normal(size=5))]) < 1e-6

    def test_requires_float64(self):
        with pytest.raises(TypeError):
            finite_difference_check(tanh, [Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)])

    def test_detects_wrong_gradient(self):
        from pixel_transfer.autodiff import make_result

        def bad(x):
            return make_result(x.data**2, "bad", (x,), lambda g: (g * 3 * x.data,))

        assert finite_difference_check(bad, [t64([0.5, 1.0, 1.5])]) > 0.1

    def test_skips_kinks(self):
        stats = {}
        x = t64([1e-5, -2e-5, 0.5, -0.5])
        err = finite_difference_check(relu, [x], eps=1e-4, stats=stats)
        assert err < 1e-9
        assert stats == {"checked": 2, "kinks": 2}
