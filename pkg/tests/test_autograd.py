import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from detectornet import autograd as ag
from detectornet.autograd import Tensor
from detectornet.errors import DimensionError, GraphStateError, NumericError

from conftest import check_gradients, max_rel_error, numeric_grad


def loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ag.matmul(a, np.eye(2)).data, a)

    def test_hand_product(self):
        out = ag.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_matches_loop_oracle(self, rng):
        a, b = rng.standard_normal((7, 5)), rng.standard_normal((5, 3))
        np.testing.assert_allclose(ag.matmul(a, b).data, loop_matmul(a, b), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("sa,sb", [((4, 3, 5), (5, 2)), ((5, 5), (4, 5, 6)),
                                       ((2, 4, 3, 5), (2, 4, 5, 2)), ((3, 5), (5, 2))])
    def test_batched_matches_per_slice_loop(self, rng, sa, sb):
        a, b = rng.standard_normal(sa), rng.standard_normal(sb)
        out = ag.matmul(a, b).data
        expect = np.empty(out.shape)
        for idx in np.ndindex(out.shape[:-2]):
            ai = a[idx[len(idx) - (a.ndim - 2):]] if a.ndim > 2 else a
            bi = b[idx[len(idx) - (b.ndim - 2):]] if b.ndim > 2 else b
            expect[idx] = loop_matmul(ai, bi)
        np.testing.assert_allclose(out, expect, atol=1e-12)

    @pytest.mark.parametrize("sa,sb", [((4, 3, 5), (5, 2)), ((5, 5), (4, 5, 6)),
                                       ((2, 4, 3, 5), (2, 4, 5, 2)), ((2, 1, 3, 5), (4, 5, 2))])
    def test_gradients(self, sa, sb):
        err = check_gradients(lambda a, b: (ag.matmul(a, b) * ag.matmul(a, b)).sum(), [sa, sb], 3)
        assert err <= 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ag.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self):
        for seed in range(10):
            r = np.random.default_rng(seed)
            a, b, c = (r.standard_normal((4, 4)) for _ in range(3))
            left = ag.matmul(ag.matmul(a, b), c).data
            right = ag.matmul(a, ag.matmul(b, c)).data
            np.testing.assert_allclose(left, right, atol=1e-9)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(ag.softmax([0.0, 0.0]).data, [0.5, 0.5], atol=1e-15)

    def test_ln3(self):
        np.testing.assert_allclose(ag.softmax([0.0, np.log(3.0)]).data, [0.25, 0.75], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                      elements=st.floats(-50, 50)),
           st.floats(-100, 100))
    def test_shift_invariance_and_rows(self, x, c):
        y = ag.softmax(x, axis=-1).data
        np.testing.assert_allclose(ag.softmax(x + c, axis=-1).data, y, atol=1e-12)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(y > 0)
        assert np.all(y <= 1.0)

    def test_saturation_safe(self):
        y = ag.softmax(np.array([[1000.0, -1000.0, 0.0]])).data
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y.sum(), 1.0, atol=1e-12)

    def test_nan_input_raises(self):
        with pytest.raises(NumericError):
            ag.softmax(np.array([0.0, np.nan]))

    @pytest.mark.parametrize("axis", [0, 1, -1])
    def test_gradient(self, axis):
        w = np.random.default_rng(9).standard_normal((3, 4))
        err = check_gradients(lambda x: (ag.softmax(x, axis=axis) * w).sum(), [(3, 4)], 5)
        assert err <= 1e-6


class TestLayerNorm:
    def test_hand_example(self):
        y = ag.layer_norm(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        np.testing.assert_allclose(y, [-1.22474, 0.0, 1.22474], atol=1e-4)

    def test_constant_vector(self):
        y = ag.layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        np.testing.assert_array_equal(y, [0.0, 0.0, 0.0])

    def test_statistics(self, rng):
        x = rng.standard_normal((5, 16)) * 10
        y = ag.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        assert np.all(np.abs(y.mean(axis=-1)) <= 1e-9)
        assert np.all(np.abs(y.var(axis=-1) - 1.0) <= 1e-6)

    def test_gradient_of_sum(self):
        def f(x, g, b):
            return ag.layer_norm(x, g, b).sum()
        # a weighted readout keeps d/dx non-trivial (the plain sum is flat in x)
        w = np.random.default_rng(2).standard_normal((4, 5))

        def weighted(x, g, b):
            return (ag.layer_norm(x, g, b) * w).sum()

        assert check_gradients(f, [(4, 5), (5,), (5,)], 11) <= 1e-6
        assert check_gradients(weighted, [(4, 5), (5,), (5,)], 11) <= 1e-6

    def test_gain_shape_checked(self):
        with pytest.raises(DimensionError):
            ag.layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(3)))


class TestReverseMode:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        (x * x).backward()
        assert x.grad == 6.0

    def test_constant_function(self):
        x = Tensor(3.0, requires_grad=True)
        (x * 0.0 + 5.0).backward()
        assert x.grad == 0.0

    def test_backward_twice_raises(self):
        x = Tensor(2.0, requires_grad=True)
        y = x * x
        y.backward()
        with pytest.raises(GraphStateError):
            y.backward()

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            (x * 2.0).backward()

    def test_shared_subexpression(self):
        x = Tensor(1.5, requires_grad=True)
        y = x * x
        (y * y + y).backward()  # x^4 + x^2
        assert x.grad == pytest.approx(4 * 1.5 ** 3 + 2 * 1.5, abs=1e-12)

    def test_no_grad_records_nothing(self):
        x = Tensor(2.0, requires_grad=True)
        with ag.no_grad():
            y = x * x
        assert not y.requires_grad

    @pytest.mark.parametrize("seed", range(10))
    def test_elementwise_and_shape_ops(self, seed):
        def f(a, b):
            h = ag.relu(a * b + 0.3) - ag.tabs(a) / (ag.square(b) + 2.0)
            h = ag.concat([h, ag.swapaxes(ag.exp(a * 0.1), 0, 1).reshape(3, 4)], axis=0)
            h = h[1:4] + ag.sqrt(ag.square(h[:3]) + 1.0)
            return ag.tmean(h, axis=1).sum()

        assert check_gradients(f, [(3, 4), (3, 4)], seed) <= 1e-4

    def test_masked_mae_one_layer_model(self, rng):
        from detectornet.model import masked_mae_loss
        x = rng.standard_normal((5, 3))
        y = rng.standard_normal((5, 2))
        mask = rng.random((5, 2)) > 0.3
        w = rng.standard_normal((3, 2))
        b = rng.standard_normal(2)
        tw, tb = Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)
        masked_mae_loss(ag.linear(x, tw, tb), y, mask).backward()

        def value():
            return masked_mae_loss(ag.linear(x, Tensor(w), Tensor(b)), y, mask).item()

        gw, gb = numeric_grad(value, [w, b])
        assert max_rel_error(tw.grad, gw) <= 1e-4
        assert max_rel_error(tb.grad, gb) <= 1e-4


class TestDropout:
    def test_eval_is_identity(self, rng):
        x = Tensor(rng.standard_normal((4, 4)))
        assert ag.Dropout(0.3, 0)(x, training=False) is x

    def test_inverted_scaling(self):
        x = Tensor(np.ones((200, 200)))
        y = ag.Dropout(0.3, 0)(x, training=True).data
        assert set(np.unique(y)) <= {0.0, 1.0 / 0.7}
        assert abs(y.mean() - 1.0) < 0.02


def test_operations_are_deterministic(rng):
    a = rng.standard_normal((3, 5, 4))
    w = rng.standard_normal((4, 4))
    g, b = rng.standard_normal(4), rng.standard_normal(4)

    def run():
        x = Tensor(a, requires_grad=True)
        y = ag.layer_norm(ag.softmax(ag.matmul(x, w), axis=-1), Tensor(g), Tensor(b))
        (y * y).sum().backward()
        return y.data, x.grad

    (y1, g1), (y2, g2) = run(), run()
    assert np.array_equal(y1, y2) and np.array_equal(g1, g2)
