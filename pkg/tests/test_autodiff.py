import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp as sp_logsumexp

import hgmflow.autodiff as ad
from hgmflow.autodiff import Node


def fd_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


class TestBasicOps:
    def test_matmul_identity(self):
        a = Node(np.eye(3))
        b = Node(np.arange(9.0).reshape(3, 3))
        assert np.array_equal(ad.matmul(a, b).value, b.value)

    def test_matmul_shape_error(self):
        with pytest.raises(ad.ShapeError):
            ad.matmul(Node(np.ones((2, 3))), Node(np.ones((2, 3))))

    def test_matmul_grad_vs_fd(self):
        rng = np.random.default_rng(0)
        a = Node(rng.normal(size=(4, 3)))
        b = Node(rng.normal(size=(3, 2)))
        w = rng.normal(size=(4, 2))
        out = ad.asum(ad.mul(ad.matmul(a, b), w))
        out.backward()
        ga = fd_grad(lambda x: float((x @ b.value * w).sum()), a.value.copy())
        gb = fd_grad(lambda x: float((a.value @ x * w).sum()), b.value.copy())
        np.testing.assert_allclose(a.grad, ga, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(b.grad, gb, rtol=1e-5, atol=1e-8)

    def test_add_broadcast_bias(self):
        rng = np.random.default_rng(1)
        x = Node(rng.normal(size=(5, 3)))
        b = Node(rng.normal(size=(3,)))
        out = ad.asum(ad.square(ad.add(x, b)))
        out.backward()
        gb = fd_grad(lambda v: float(((x.value + v) ** 2).sum()), b.value.copy())
        np.testing.assert_allclose(b.grad, gb, rtol=1e-5, atol=1e-8)
        assert b.grad.shape == (3,)

    def test_scalar_constant_keeps_dtype(self):
        x = Node(np.ones((2, 2), dtype=np.float32))
        out = ad.mul(ad.add(x, 1.5), 2.0)
        assert out.dtype == np.float32


ELEMENTWISE = {
    "tanh": (ad.tanh, np.tanh),
    "exp": (ad.exp, np.exp),
    "square": (ad.square, np.square),
    "neg": (ad.neg, np.negative),
}


class TestElementwise:
    @pytest.mark.parametrize("name", sorted(ELEMENTWISE))
    def test_forward_and_grad(self, name):
        op, ref = ELEMENTWISE[name]
        rng = np.random.default_rng(7)
        x = Node(rng.uniform(-2, 2, size=(3, 4)))
        out = op(x)
        np.testing.assert_allclose(out.value, ref(x.value), rtol=1e-12)
        ad.asum(out).backward()
        g = fd_grad(lambda v: float(ref(v).sum()), x.value.copy())
        np.testing.assert_allclose(x.grad, g, rtol=1e-4, atol=1e-8)

    def test_log_grad(self):
        rng = np.random.default_rng(8)
        x = Node(rng.uniform(0.5, 3.0, size=(6,)))
        ad.asum(ad.log(x)).backward()
        np.testing.assert_allclose(x.grad, 1.0 / x.value, rtol=1e-12)

    def test_log_of_zero_raises(self):
        with pytest.raises(ad.NumericsError):
            ad.log(Node(np.array([1.0, 0.0])))

    def test_exp_overflow_raises(self):
        with pytest.raises(ad.NumericsError):
            ad.exp(Node(np.array([1e6])))

    def test_leaf_rejects_nan(self):
        with pytest.raises(ad.NumericsError):
            Node(np.array([np.nan]))


class TestReductions:
    def test_sum_axis_keepdims(self):
        x = Node(np.arange(6.0).reshape(2, 3))
        out = ad.asum(x, axis=1, keepdims=True)
        assert out.shape == (2, 1)
        np.testing.assert_array_equal(out.value, [[3.0], [12.0]])

    def test_mean_grad(self):
        x = Node(np.arange(8.0).reshape(2, 4))
        ad.asum(ad.square(ad.amean(x, axis=1))).backward()
        g = fd_grad(lambda v: float((v.mean(axis=1) ** 2).sum()), x.value.copy())
        np.testing.assert_allclose(x.grad, g, rtol=1e-5, atol=1e-8)


class TestLogsumexp:
    def test_single_element_identity(self):
        x = Node(np.array([[3.25]]))
        assert ad.logsumexp(x, axis=1).value.item() == pytest.approx(3.25, abs=0)

    def test_two_zeros(self):
        out = ad.logsumexp(Node(np.zeros(2)), axis=0)
        assert float(out.value) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_large_negative_shift(self):
        # [-1e4, -1e4 + 1] stays finite and matches the shifted 64-bit oracle.
        x = np.array([-1e4, -1e4 + 1.0])
        out = ad.logsumexp(Node(x), axis=0)
        assert np.isfinite(out.value)
        assert float(out.value) == pytest.approx(sp_logsumexp(x), rel=1e-12)

    def test_matches_scipy_random(self):
        rng = np.random.default_rng(3)
        x = rng.normal(scale=50.0, size=(5, 9))
        out = ad.logsumexp(Node(x), axis=1)
        np.testing.assert_allclose(out.value, sp_logsumexp(x, axis=1), rtol=1e-12)

    def test_grad_is_softmax(self):
        rng = np.random.default_rng(4)
        x = Node(rng.normal(size=(3, 5)))
        ad.asum(ad.logsumexp(x, axis=1)).backward()
        g = fd_grad(lambda v: float(sp_logsumexp(v, axis=1).sum()), x.value.copy())
        np.testing.assert_allclose(x.grad, g, rtol=1e-4, atol=1e-8)

    def test_empty_axis_error(self):
        with pytest.raises(ad.ShapeError):
            ad.logsumexp(Node(np.zeros((2, 0))), axis=1)

    @given(
        st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=1, max_size=16)
    )
    @settings(max_examples=200, deadline=None)
    def test_bounds_property(self, xs):
        # max(x) <= logsumexp(x) <= max(x) + ln n, finite up to |x| = 1e4.
        arr = np.array(xs, dtype=np.float64)
        out = float(ad.logsumexp(Node(arr), axis=0).value)
        assert np.isfinite(out)
        assert out >= arr.max() - 1e-9
        assert out <= arr.max() + np.log(len(xs)) + 1e-9


class TestLogsoftmax:
    def test_single_entry_is_zero(self):
        out = ad.logsoftmax(Node(np.array([[7.0]])), axis=1)
        assert out.value.item() == 0.0

    def test_uniform_four(self):
        out = ad.logsoftmax_at(Node(np.zeros(4)), 0)
        assert float(out.value) == pytest.approx(-np.log(4.0), rel=1e-12)

    def test_exp_sums_to_one(self):
        rng = np.random.default_rng(5)
        x = rng.normal(scale=3.0, size=8)
        out = ad.logsoftmax(Node(x), axis=0)
        assert abs(np.exp(out.value).sum() - 1.0) <= 1e-6
        assert np.all(out.value <= 0.0)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            ad.logsoftmax_at(Node(np.zeros(3)), 3)

    def test_grad_vs_fd(self):
        rng = np.random.default_rng(6)
        x = Node(rng.normal(size=(4, 6)))
        w = rng.normal(size=(4, 6))

        def ref(v):
            ls = v - sp_logsumexp(v, axis=1, keepdims=True)
            return float((ls * w).sum())

        ad.asum(ad.mul(ad.logsoftmax(x, axis=1), w)).backward()
        np.testing.assert_allclose(
            x.grad, fd_grad(ref, x.value.copy()), rtol=1e-4, atol=1e-8
        )

    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_normalization_property(self, n, seed):
        x = np.random.default_rng(seed).normal(scale=10.0, size=n)
        out = ad.logsoftmax(Node(x), axis=0).value
        assert abs(np.exp(out).sum() - 1.0) <= 1e-6


class TestStructure:
    def test_concat_split_roundtrip(self):
        rng = np.random.default_rng(9)
        a = Node(rng.normal(size=(3, 2)))
        b = Node(rng.normal(size=(3, 4)))
        joined = ad.concat([a, b], axis=1)
        pa, pb = ad.split(joined, [2], axis=1)
        np.testing.assert_array_equal(pa.value, a.value)
        np.testing.assert_array_equal(pb.value, b.value)

    def test_split_grads_scatter(self):
        rng = np.random.default_rng(10)
        x = Node(rng.normal(size=(2, 6)))
        lo, hi = ad.split(x, 2, axis=1)
        ad.asum(ad.add(ad.square(lo), ad.mul(hi, 3.0))).backward()
        g = fd_grad(
            lambda v: float((v[:, :3] ** 2).sum() + 3.0 * v[:, 3:].sum()),
            x.value.copy(),
        )
        np.testing.assert_allclose(x.grad, g, rtol=1e-5, atol=1e-8)

    def test_concat_grad(self):
        rng = np.random.default_rng(11)
        a = Node(rng.normal(size=(2, 3)))
        const = rng.normal(size=(2, 2))
        out = ad.asum(ad.square(ad.concat([a, const], axis=1)))
        out.backward()
        np.testing.assert_allclose(a.grad, 2.0 * a.value, rtol=1e-12)

    def test_transpose(self):
        x = Node(np.arange(6.0).reshape(2, 3))
        ad.asum(ad.mul(ad.transpose(x), np.ones((3, 2)))).backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_reshape_grad(self):
        x = Node(np.arange(6.0))
        ad.asum(ad.square(ad.reshape(x, (2, 3)))).backward()
        np.testing.assert_allclose(x.grad, 2.0 * x.value)

    def test_permute_feature_roundtrip_and_grad(self):
        rng = np.random.default_rng(12)
        x = Node(rng.normal(size=(4, 5)))
        perm = rng.permutation(5)
        out = ad.permute_feature(x, perm)
        np.testing.assert_array_equal(out.value, x.value[:, perm])
        w = rng.normal(size=(4, 5))
        ad.asum(ad.mul(out, w)).backward()
        np.testing.assert_allclose(x.grad, w[:, np.argsort(perm)], rtol=1e-12)

    def test_permute_feature_rejects_non_permutation(self):
        with pytest.raises(ad.ShapeError):
            ad.permute_feature(Node(np.ones((2, 3))), np.array([0, 0, 2]))


class TestStopGradient:
    def test_identity_forward_zero_backward(self):
        x = Node(np.array([2.0, -1.0]))
        held = ad.stop_gradient(x)
        np.testing.assert_array_equal(held.value, x.value)
        out = ad.asum(ad.add(ad.square(x), ad.mul(held, 10.0)))
        out.backward()
        np.testing.assert_allclose(x.grad, 2.0 * x.value)


class TestBackwardMechanics:
    def test_scalar_required(self):
        with pytest.raises(ad.ShapeError):
            Node(np.ones(3)).backward()

    def test_each_edge_visited_once(self):
        calls = {"n": 0}
        x = Node(np.array(2.0))
        y = ad.square(x)

        orig_edges = y._edges
        parent, vjp = orig_edges[0]

        def counting(g):
            calls["n"] += 1
            return vjp(g)

        y._edges = ((parent, counting),)
        # Diamond: z = y*y reuses y twice; y's own vjp must still fire once.
        z = ad.mul(y, y)
        z.backward()
        assert calls["n"] == 1
        assert float(x.grad) == pytest.approx(4.0 * 2.0**3)

    def test_fanout_accumulates(self):
        x = Node(np.array(3.0))
        out = ad.add(ad.square(x), ad.mul(x, 5.0))
        out.backward()
        assert float(x.grad) == pytest.approx(2 * 3.0 + 5.0)


class TestGradCheck:
    def test_square_at_three(self):
        x = Node(np.array(3.0, dtype=np.float64))
        report = ad.grad_check(lambda: ad.square(x), {"x": x})
        assert report.ok
        np.testing.assert_allclose(x.grad, 6.0, rtol=1e-10)

    def test_requires_float64(self):
        x = Node(np.array(1.0, dtype=np.float32))
        with pytest.raises(ValueError):
            ad.grad_check(lambda: ad.square(x), [x])

    def test_flags_mismatch(self):
        # FD sees through stop_gradient while reverse mode does not, so
        # sum(sg(x) * x) has AD grad x but FD grad 2x: must be flagged.
        x = Node(np.array([1.0, 2.0]))
        report = ad.grad_check(
            lambda: ad.asum(ad.mul(ad.stop_gradient(x), x)), {"x": x}
        )
        assert not report.ok
        assert report.failures()

    def test_multi_param(self):
        rng = np.random.default_rng(13)
        w = Node(rng.normal(size=(3, 2)))
        b = Node(rng.normal(size=(2,)))
        x = rng.normal(size=(5, 3))

        def f():
            return ad.amean(ad.square(ad.add(ad.matmul(Node(x), w), b)))

        report = ad.grad_check(f, {"w": w, "b": b})
        assert report.ok, report.failures()
        assert {e.name for e in report.entries} == {"w", "b"}
