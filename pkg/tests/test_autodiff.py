"""Engine tests: primitive backward rules against scalar oracles and
central finite differences, accumulation semantics, and shape policing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bowseq import autodiff as ad
from bowseq.autodiff import (
    Node,
    ParameterStore,
    ShapeError,
    backward,
    constant,
    finite_difference_check,
    parameter,
)


def fd_gradient(f, x, step=1e-6):
    """Central finite differences of a scalar function over one array."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        plus = f()
        flat[j] = orig - step
        minus = f()
        flat[j] = orig
        out[j] = (plus - minus) / (2.0 * step)
    return grad


class TestPrimitiveValues:
    def test_matmul_matches_numpy(self):
        rng = np.random.default_rng(42)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
        np.testing.assert_array_equal(ad.matmul(constant(a), constant(b)).value, a @ b)

    def test_add_bias_broadcasts_rows(self):
        a = constant(np.arange(6.0).reshape(2, 3))
        bias = constant(np.array([[10.0, 20.0, 30.0]]))
        np.testing.assert_array_equal(
            ad.add(a, bias).value, np.arange(6.0).reshape(2, 3) + [10, 20, 30]
        )

    def test_add_scalar(self):
        out = ad.add(constant(np.ones((2, 2))), constant(np.asarray(2.5)))
        np.testing.assert_array_equal(out.value, np.full((2, 2), 3.5))

    def test_log_clamps_at_floor(self):
        out = ad.log(constant(np.array([[1.0, 0.0, 1e-15]])))
        assert out.value[0, 0] == 0.0
        assert out.value[0, 1] == pytest.approx(np.log(1e-12))
        assert out.value[0, 2] == pytest.approx(np.log(1e-12))

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = ad.sigmoid(constant(np.array([[-1000.0, 0.0, 1000.0]])))
        np.testing.assert_allclose(out.value, [[0.0, 0.5, 1.0]], atol=1e-12)

    def test_softmax_rows_uniform_on_equal_scores(self):
        out = ad.softmax_rows(constant(np.zeros((2, 4))))
        np.testing.assert_allclose(out.value, np.full((2, 4), 0.25), rtol=0, atol=0)

    def test_softmax_rows_masked_entries_exactly_zero(self):
        mask = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        out = ad.softmax_rows(constant(np.random.default_rng(0).normal(size=(2, 3))), mask)
        assert out.value[0, 2] == 0.0
        assert out.value[1, 1] == 0.0 and out.value[1, 2] == 0.0
        np.testing.assert_allclose(out.value.sum(axis=1), [1.0, 1.0], atol=1e-12)

    def test_softmax_fully_masked_row_rejected(self):
        with pytest.raises(ValueError, match="fully masked"):
            ad.softmax_rows(constant(np.ones((2, 2))), np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_embedding_rows_gathered(self):
        table = constant(np.arange(12.0).reshape(4, 3))
        out = ad.embedding_lookup(table, np.array([2, 0, 2]))
        np.testing.assert_array_equal(out.value, [[6, 7, 8], [0, 1, 2], [6, 7, 8]])

    def test_pick_columns(self):
        x = constant(np.arange(6.0).reshape(2, 3))
        out = ad.pick_columns(x, np.array([2, 0]))
        np.testing.assert_array_equal(out.value, [[2.0], [3.0]])

    def test_concat_then_slice_roundtrip(self):
        a, b = np.ones((2, 2)), np.full((2, 3), 2.0)
        joined = ad.concat_cols([constant(a), constant(b)])
        np.testing.assert_array_equal(ad.slice_cols(joined, 2, 5).value, b)

    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=1, max_value=6),
           st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_softmax_rows_simplex_property(self, rows, cols, seed):
        x = np.random.default_rng(seed).uniform(-30, 30, size=(rows, cols))
        y = ad.softmax_rows(constant(x)).value
        np.testing.assert_allclose(y.sum(axis=1), np.ones(rows), atol=1e-12)
        assert np.all(y > 0) and np.all(y < 1 + 1e-15)


class TestShapeErrors:
    def test_matmul_inner_dim(self):
        with pytest.raises(ShapeError, match="matmul"):
            ad.matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))

    def test_add_column_broadcast_rejected(self):
        with pytest.raises(ShapeError, match="add"):
            ad.add(constant(np.ones((3, 2))), constant(np.ones((3, 1))))

    def test_mul_shape_mismatch(self):
        with pytest.raises(ShapeError, match="mul"):
            ad.mul(constant(np.ones((2, 2))), constant(np.ones((2, 3))))

    def test_scale_rows_needs_column(self):
        with pytest.raises(ShapeError, match="scale_rows"):
            ad.scale_rows(constant(np.ones((2, 3))), constant(np.ones((2, 2))))

    def test_dropout_mask_shape(self):
        with pytest.raises(ShapeError, match="dropout"):
            ad.dropout(constant(np.ones((2, 2))), np.ones((2, 3)))

    def test_error_names_offending_shapes(self):
        try:
            ad.matmul(constant(np.ones((2, 3))), constant(np.ones((4, 5))))
        except ShapeError as e:
            assert "(2, 3)" in str(e) and "(4, 5)" in str(e)
        else:
            pytest.fail("expected ShapeError")


class TestBackwardRules:
    """Each primitive's gradient against finite differences of its own value."""

    def _check(self, build, params, step=1e-6, tol=1e-7):
        for p in params:
            p.grad[...] = 0.0
        root = build()
        backward(root)
        for p in params:
            numeric = fd_gradient(lambda: float(build().value), p.value, step)
            np.testing.assert_allclose(p.grad, numeric, rtol=tol, atol=tol)

    def test_matmul(self):
        rng = np.random.default_rng(1)
        a, b = parameter(rng.normal(size=(2, 3))), parameter(rng.normal(size=(3, 2)))
        self._check(lambda: ad.sum_all(ad.matmul(a, b)), [a, b])

    def test_add_bias_accumulates_over_rows(self):
        rng = np.random.default_rng(2)
        a, b = parameter(rng.normal(size=(4, 3))), parameter(rng.normal(size=(1, 3)))
        self._check(lambda: ad.sum_all(ad.tanh(ad.add(a, b))), [a, b])

    def test_mul_and_scale(self):
        rng = np.random.default_rng(3)
        a, b = parameter(rng.normal(size=(3, 3))), parameter(rng.normal(size=(3, 3)))
        self._check(lambda: ad.sum_all(ad.scale(ad.mul(a, b), -0.7)), [a, b])

    def test_sigmoid_tanh_log_chain(self):
        rng = np.random.default_rng(4)
        a = parameter(rng.uniform(0.5, 2.0, size=(2, 4)))
        self._check(lambda: ad.sum_all(ad.log(ad.sigmoid(ad.tanh(a)))), [a])

    def test_softmax_rows_masked(self):
        rng = np.random.default_rng(5)
        a = parameter(rng.normal(size=(3, 4)))
        mask = np.array([[1, 1, 1, 0], [1, 1, 0, 0], [1, 1, 1, 1]], dtype=float)
        weights = constant(rng.normal(size=(3, 4)))
        self._check(lambda: ad.sum_all(ad.mul(ad.softmax_rows(a, mask), weights)), [a])

    def test_embedding_scatter_adds_repeated_rows(self):
        table = parameter(np.random.default_rng(6).normal(size=(5, 3)))
        idx = np.array([1, 1, 4])
        self._check(lambda: ad.sum_all(ad.tanh(ad.embedding_lookup(table, idx))), [table])
        backward(ad.sum_all(ad.embedding_lookup(table, idx)))

    def test_pick_scale_rows_slice_concat(self):
        rng = np.random.default_rng(7)
        a = parameter(rng.normal(size=(3, 4)))
        s = parameter(rng.uniform(0.5, 1.5, size=(3, 1)))

        def build():
            picked = ad.pick_columns(ad.softmax_rows(a), np.array([0, 2, 3]))
            scaled = ad.scale_rows(ad.tanh(a), s)
            joined = ad.concat_cols([picked, scaled])
            return ad.sum_all(ad.mul(ad.slice_cols(joined, 0, 3), ad.slice_cols(joined, 2, 5)))

        self._check(build, [a, s])

    def test_sum_rows_and_dropout(self):
        rng = np.random.default_rng(8)
        a = parameter(rng.normal(size=(4, 3)))
        mask = ad.make_dropout_mask(np.random.default_rng(9), (4, 3), 0.4)
        self._check(lambda: ad.sum_all(ad.sigmoid(ad.sum_rows(ad.dropout(a, mask)))), [a])


class TestBackwardSemantics:
    def test_repeated_backward_doubles_leaf_gradients(self):
        a = parameter(np.array([[1.0, 2.0], [3.0, 4.0]]))
        root = ad.sum_all(ad.tanh(a))
        backward(root)
        once = a.grad.copy()
        backward(root)
        np.testing.assert_array_equal(a.grad, 2.0 * once)

    def test_scaled_root_scales_gradients_linearly(self):
        a = parameter(np.array([[0.3, -0.2], [0.1, 0.7]]))
        root = ad.sum_all(ad.sigmoid(a))
        backward(root)
        base = a.grad.copy()
        a.grad[...] = 0.0
        backward(ad.scale(root, 3.5))
        np.testing.assert_allclose(a.grad, 3.5 * base, rtol=0, atol=1e-12)

    def test_two_roots_accumulate_into_shared_leaf(self):
        a = parameter(np.array([[1.0, -1.0]]))
        r1, r2 = ad.sum_all(ad.tanh(a)), ad.sum_all(ad.sigmoid(a))
        backward(r1)
        g1 = a.grad.copy()
        a.grad[...] = 0.0
        backward(r2)
        g2 = a.grad.copy()
        a.grad[...] = 0.0
        backward(r1)
        backward(r2)
        np.testing.assert_allclose(a.grad, g1 + g2, atol=1e-15)

    def test_backward_requires_scalar_root(self):
        a = parameter(np.ones((2, 2)))
        with pytest.raises(ValueError, match="scalar"):
            backward(ad.tanh(a))

    def test_constants_never_collect_gradients(self):
        a, c = parameter(np.ones((2, 2))), constant(np.ones((2, 2)))
        backward(ad.sum_all(ad.mul(a, c)))
        np.testing.assert_array_equal(c.grad, np.zeros((2, 2)))

    def test_gradient_shape_always_matches_value(self):
        a = parameter(np.ones((3, 2)))
        out = ad.softmax_rows(ad.matmul(a, constant(np.ones((2, 5)))))
        for node in (a, out):
            assert node.grad.shape == node.value.shape

    def test_forward_determinism_same_inputs(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(3, 3))
        first = ad.softmax_rows(ad.tanh(ad.matmul(constant(x), constant(x)))).value
        second = ad.softmax_rows(ad.tanh(ad.matmul(constant(x), constant(x)))).value
        np.testing.assert_array_equal(first, second)


class TestParameterStore:
    def test_insertion_order_preserved(self):
        store = ParameterStore()
        for name in ("w", "b", "u"):
            store.create(name, np.zeros((1, 1)))
        assert store.names() == ["w", "b", "u"]

    def test_duplicate_name_rejected(self):
        store = ParameterStore()
        store.create("w", np.zeros((1, 1)))
        with pytest.raises(ValueError, match="duplicate"):
            store.create("w", np.ones((1, 1)))

    def test_zero_gradients_clears_all(self):
        store = ParameterStore()
        w = store.create("w", np.ones((2, 2)))
        backward(ad.sum_all(ad.tanh(w)))
        assert np.any(w.grad != 0)
        store.zero_gradients()
        np.testing.assert_array_equal(w.grad, np.zeros((2, 2)))


class TestFiniteDifferenceHarness:
    def test_linear_loss_exact(self):
        store = ParameterStore()
        w = store.create("w", np.array([[1.0, -2.0, 0.5]]))
        x = constant(np.array([[3.0], [1.0], [-1.0]]))
        report = finite_difference_check(
            lambda s: ad.sum_all(ad.matmul(s["w"], x)), store, step=1e-5, tolerance=1e-10
        )
        assert report.passed and report.max_rel_error < 1e-10

    def test_empty_store_passes_vacuously(self):
        report = finite_difference_check(
            lambda s: ad.sum_all(constant(np.ones((1, 1)))), ParameterStore()
        )
        assert report.passed and report.checks == []

    def test_composite_of_all_primitives(self):
        """Three-layer composite touching every primitive, step 1e-5, rel 1e-6."""
        rng = np.random.default_rng(1234)
        store = ParameterStore()
        table = store.create("table", rng.normal(0.0, 1.0, size=(6, 4)))
        w1 = store.create("w1", rng.normal(0.0, 1.0, size=(4, 5)))
        b1 = store.create("b1", rng.normal(0.0, 1.0, size=(1, 5)))
        w2 = store.create("w2", rng.normal(0.0, 1.0, size=(5, 4)))
        gains = store.create("gains", rng.uniform(0.8, 1.2, size=(3, 1)))
        idx = np.array([0, 3, 5])
        picks = np.array([1, 0, 3])
        mask = np.array([[1, 1, 1, 0, 1], [1, 1, 1, 1, 1], [0, 1, 1, 1, 1]], dtype=float)
        drop = ad.make_dropout_mask(np.random.default_rng(99), (3, 5), 0.25)

        def loss(s):
            h0 = ad.embedding_lookup(s["table"], idx)
            h1 = ad.tanh(ad.add(ad.matmul(h0, s["w1"]), s["b1"]))
            h1 = ad.dropout(h1, drop)
            att = ad.softmax_rows(h1, mask)
            h2 = ad.sigmoid(ad.matmul(att, s["w2"]))
            h2 = ad.scale_rows(h2, s["gains"])
            joined = ad.concat_cols([h2, h0])
            left = ad.slice_cols(joined, 0, 4)
            probs = ad.softmax_rows(ad.mul(left, h0))
            nll = ad.scale(ad.sum_all(ad.log(ad.pick_columns(probs, picks))), -1.0)
            spread = ad.sum_all(ad.mul(ad.sum_rows(h2), ad.sum_rows(h2)))
            return ad.add(ad.add(nll, ad.scale(spread, 0.5)), constant(np.asarray(0.25)))

        report = finite_difference_check(loss, store, step=1e-5, tolerance=1e-6)
        assert report.passed, "\n" + report.format()
