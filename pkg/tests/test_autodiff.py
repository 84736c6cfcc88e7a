import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from eventgc import autodiff as ad

from conftest import assert_grad_close, central_diff


def _value(fn, *arrays):
    return float(fn(*[ad.Tensor(a) for a in arrays]).value)


def check_grad(fn, *arrays, h=1e-6, rtol=1e-4, atol=1e-6):
    grads = ad.grad(fn, *arrays)
    for i, a in enumerate(arrays):
        def f(x, i=i):
            args = list(arrays)
            args[i] = x
            return _value(fn, *args)
        assert_grad_close(grads[i], central_diff(f, a, h), rtol, atol)


class TestForwardValues:
    def test_sigmoid_zero(self):
        assert ad.sigmoid(ad.Tensor(0.0)).value == 0.5

    def test_softplus_zero(self):
        assert ad.softplus(ad.Tensor(0.0)).value == pytest.approx(np.log(2.0), abs=1e-15)

    def test_softplus_large_is_stable(self):
        x = np.array([-800.0, -40.0, 0.0, 35.0, 800.0])
        y = ad.softplus(ad.Tensor(x)).value
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y, np.logaddexp(0.0, x), rtol=1e-14)

    def test_sigmoid_extreme(self):
        y = ad.sigmoid(ad.Tensor(np.array([-800.0, 800.0]))).value
        np.testing.assert_array_equal(y, [0.0, 1.0])

    def test_matmul_identity(self, rng):
        M = rng.normal(size=(3, 3))
        np.testing.assert_array_equal(ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(M)).value, M)

    def test_gather_rows_is_onehot_matmul(self, rng):
        table = rng.normal(size=(4, 3))
        onehot = np.eye(4)[[2, 0, 3]]
        np.testing.assert_allclose(ad.gather_rows(ad.Tensor(table), ad.Tensor(onehot)).value, table[[2, 0, 3]])

    def test_zero_onehot_gathers_zero(self, rng):
        table = rng.normal(size=(4, 3))
        out = ad.gather_rows(ad.Tensor(table), ad.Tensor(np.zeros((2, 4)))).value
        np.testing.assert_array_equal(out, 0.0)

    @pytest.mark.parametrize("axis", [None, 0, 1, -1])
    def test_sum_mean(self, rng, axis):
        x = rng.normal(size=(3, 4))
        np.testing.assert_allclose(ad.sum(ad.Tensor(x), axis).value, x.sum(axis=axis))
        np.testing.assert_allclose(ad.mean(ad.Tensor(x), axis).value, x.mean(axis=axis))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            ad.add(ad.Tensor(np.ones(3)), ad.Tensor(np.ones(4)))
        with pytest.raises(ValueError):
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


class TestBackwardBasics:
    def test_square(self):
        (g,) = ad.grad(lambda x: ad.mul(x, x), np.array(3.0))
        assert g == 6.0

    def test_constant_has_zero_grad(self):
        (g,) = ad.grad(lambda x: ad.sum(ad.add(ad.mul(x, 0.0), 5.0)), np.array([1.0, 2.0]))
        np.testing.assert_array_equal(g, 0.0)

    def test_unused_input_zero(self):
        g = ad.grad(lambda x, y: ad.sum(ad.exp(x)), np.ones(2), np.ones(3))
        np.testing.assert_array_equal(g[1], np.zeros(3))

    def test_nonscalar_raises(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.backward(ad.exp(x))

    def test_sigmoid_matmul_fd(self, rng):
        W = rng.normal(size=(5, 5))
        x = rng.normal(size=5)
        check_grad(lambda W, x: ad.sum(ad.sigmoid(ad.matmul(W, x))), W, x, h=1e-4)

    def test_shared_subexpression_matches_unrolled(self, rng):
        x = rng.normal(size=4)

        def shared(x):
            y = ad.tanh(x)
            return ad.sum(ad.add(ad.mul(y, y), y))

        def unrolled(x):
            return ad.sum(ad.add(ad.mul(ad.tanh(x), ad.tanh(x)), ad.tanh(x)))

        np.testing.assert_allclose(ad.grad(shared, x)[0], ad.grad(unrolled, x)[0], rtol=1e-14)

    def test_repeated_backward_identical(self, rng):
        W = ad.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        x = rng.normal(size=3)
        out = ad.sum(ad.softplus(ad.matmul(W, x)))
        ad.backward(out)
        first = W.grad.copy()
        W.zero_grad()
        out = ad.sum(ad.softplus(ad.matmul(W, x)))
        ad.backward(out)
        np.testing.assert_array_equal(first, W.grad)


arrays = hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
                    elements=st.floats(-2, 2, allow_nan=False))

UNARY = {
    "exp": ad.exp,
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "softplus": ad.softplus,
    "neg": ad.neg,
    "log": lambda x: ad.log(ad.add(ad.mul(x, x), 1.0)),
}


class TestOpGradientsProperty:
    @pytest.mark.parametrize("name", sorted(UNARY))
    @given(x=arrays)
    def test_unary(self, name, x):
        op = UNARY[name]
        w = np.linspace(0.5, 1.5, x.size).reshape(x.shape)
        check_grad(lambda x: ad.sum(ad.mul(op(x), w)), x)

    @given(x=arrays, data=st.data())
    def test_binary_elementwise(self, x, data):
        y = data.draw(hnp.arrays(np.float64, x.shape, elements=st.floats(-2, 2, allow_nan=False)))
        for op in (ad.add, ad.sub, ad.mul):
            check_grad(lambda a, b: ad.sum(ad.tanh(op(a, b))), x, y)

    @given(x=arrays)
    def test_broadcast_row(self, x):
        b = np.linspace(-1, 1, x.shape[1])
        check_grad(lambda a, b: ad.sum(ad.sigmoid(ad.mul(a, b))), x, b)
        check_grad(lambda b: ad.sum(ad.tanh(ad.broadcast(b, x.shape))), b)

    @given(x=arrays, k=st.integers(1, 3))
    def test_matmul(self, x, k):
        B = np.cos(np.arange(x.shape[1] * k, dtype=float)).reshape(x.shape[1], k)
        check_grad(lambda a, b: ad.sum(ad.tanh(ad.matmul(a, b))), x, B)

    @given(x=arrays)
    def test_concat_stack_slice_reshape(self, x):
        w = np.sin(np.arange(2 * x.size, dtype=float))

        def f(a):
            c = ad.concat([a, ad.exp(a)], axis=-1)
            s = ad.stack([a, ad.tanh(a)], axis=0)
            r = ad.reshape(s, (2 * x.size,))
            return ad.add(ad.sum(ad.mul(r, w)), ad.sum(c[:, :1]))

        check_grad(f, x)

    @given(x=arrays)
    def test_sum_mean_axes(self, x):
        check_grad(lambda a: ad.sum(ad.tanh(ad.sum(a, axis=0))), x)
        check_grad(lambda a: ad.sum(ad.exp(ad.mean(a, axis=1))), x)

    def test_gather_rows_grad_flows_to_onehot(self, rng):
        table = rng.normal(size=(3, 2))
        onehot = np.eye(3)[[0, 2]]
        check_grad(lambda t, z: ad.sum(ad.tanh(ad.gather_rows(t, z))), table, onehot)
