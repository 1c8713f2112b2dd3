"""Finite-difference checks for every autodiff op and kernel backend parity."""

import numpy as np
import pytest

from higformer import autograd as ag
from higformer import kernels


def finite_diff(fn, x, h=1e-6):
    """Central finite differences of scalar fn at x, elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        dn = fn()
        flat[i] = orig
        gf[i] = (up - dn) / (2 * h)
    return g


def check_op(build, params, tol=1e-6):
    """build() -> scalar Tensor using the given param Tensors."""
    out = build()
    out.backward()
    for p in params:
        fd = finite_diff(lambda: build().data.item(), p.data)
        err = np.abs(p.grad - fd).max()
        denom = max(1.0, np.abs(fd).max())
        assert err / denom < tol, f"grad mismatch: {err / denom}"
        p.grad = None


class TestElementwiseOps:
    def test_add_broadcast(self):
        rng = np.random.default_rng(0)
        a = ag.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        b = ag.Tensor(rng.normal(size=(3,)), requires_grad=True)
        w = rng.normal(size=(4, 3))
        check_op(lambda: ag.ssum(ag.mul(ag.add(a, b), ag.Tensor(w))), [a, b])

    def test_sub_mul(self):
        rng = np.random.default_rng(1)
        a = ag.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        b = ag.Tensor(rng.normal(size=(4, 1)), requires_grad=True)
        check_op(lambda: ag.ssum(ag.mul(ag.sub(a, b), b)), [a, b])

    def test_scale_reshape(self):
        rng = np.random.default_rng(2)
        a = ag.Tensor(rng.normal(size=(6,)), requires_grad=True)
        check_op(lambda: ag.ssum(ag.reshape(ag.scale(a, 2.5), (2, 3))), [a])

    @pytest.mark.parametrize("op", [ag.elu, ag.sigmoid, lambda t: ag.leaky_relu(t, 0.2)])
    def test_nonlinearities(self, op):
        rng = np.random.default_rng(3)
        # keep values away from the leaky-relu kink for clean finite differences
        vals = rng.normal(size=(5, 4))
        vals[np.abs(vals) < 1e-2] = 0.5
        a = ag.Tensor(vals, requires_grad=True)
        w = rng.normal(size=(5, 4))
        check_op(lambda: ag.ssum(ag.mul(op(a), ag.Tensor(w))), [a])


class TestLinAlgOps:
    def test_matmul(self):
        rng = np.random.default_rng(4)
        a = ag.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = ag.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        w = rng.normal(size=(3, 2))
        check_op(lambda: ag.ssum(ag.mul(ag.matmul(a, b), ag.Tensor(w))), [a, b])

    def test_concat_slice(self):
        rng = np.random.default_rng(5)
        a = ag.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = ag.Tensor(rng.normal(size=(4, 3)), requires_grad=True)

        def build():
            cat = ag.concat([a, b], axis=0)
            return ag.ssum(ag.mul(ag.slice_rows(cat, 1, 5), ag.slice_rows(cat, 0, 4)))

        check_op(build, [a, b])

    def test_concat_axis1(self):
        rng = np.random.default_rng(6)
        a = ag.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        b = ag.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        w = rng.normal(size=(3, 7))
        check_op(lambda: ag.ssum(ag.mul(ag.concat([a, b], axis=1), ag.Tensor(w))), [a, b])

    def test_gather_repeated_rows(self):
        rng = np.random.default_rng(7)
        a = ag.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        idx = np.array([0, 2, 2, 3, 0])
        w = rng.normal(size=(5, 3))
        check_op(lambda: ag.ssum(ag.mul(ag.gather_rows(a, idx), ag.Tensor(w))), [a])

    def test_segment_sum(self):
        rng = np.random.default_rng(8)
        vals = ag.Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        seg = np.array([0, 0, 1, 3, 3, 3])
        w = rng.normal(size=(4, 3))
        check_op(lambda: ag.ssum(ag.mul(ag.segment_sum(vals, seg, 4), ag.Tensor(w))), [vals])

    def test_mean0(self):
        rng = np.random.default_rng(9)
        a = ag.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        w = rng.normal(size=(3,))
        check_op(lambda: ag.ssum(ag.mul(ag.mean0(a), ag.Tensor(w))), [a])


class TestSoftmaxFamily:
    def test_softmax_rows(self):
        rng = np.random.default_rng(10)
        a = ag.Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        w = rng.normal(size=(4, 5))
        check_op(lambda: ag.ssum(ag.mul(ag.softmax(a), ag.Tensor(w))), [a])
        assert np.allclose(ag.softmax(a).data.sum(axis=1), 1.0)

    def test_edge_softmax(self):
        rng = np.random.default_rng(11)
        logits = ag.Tensor(rng.normal(size=(7,)), requires_grad=True)
        dst = np.array([0, 0, 1, 1, 1, 2, 0])
        w = rng.normal(size=(7,))
        check_op(lambda: ag.ssum(ag.mul(ag.edge_softmax(logits, dst, 3), ag.Tensor(w))), [logits])
        alpha = ag.edge_softmax(logits, dst, 3).data
        for node in range(3):
            assert abs(alpha[dst == node].sum() - 1.0) < 1e-12

    def test_cross_entropy(self):
        rng = np.random.default_rng(12)
        logits = ag.Tensor(rng.normal(size=(3,)), requires_grad=True)
        check_op(lambda: ag.cross_entropy(logits, 1), [logits])


class TestFusedOps:
    def test_attention(self):
        rng = np.random.default_rng(13)
        q = ag.Tensor(rng.normal(size=(5, 6)), requires_grad=True)
        k = ag.Tensor(rng.normal(size=(5, 6)), requires_grad=True)
        v = ag.Tensor(rng.normal(size=(5, 6)), requires_grad=True)
        w = rng.normal(size=(5, 6))
        check_op(lambda: ag.ssum(ag.mul(ag.attention(q, k, v, 2), ag.Tensor(w))), [q, k, v], tol=1e-5)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(14)
        x = [ag.Tensor(rng.normal(size=(9, 8))) for _ in range(3)]
        maps = []
        ag.attention(*x, 4, collect=maps)
        assert len(maps) == 1
        np.testing.assert_allclose(maps[0].sum(axis=2), 1.0, atol=1e-6)

    def test_layer_norm(self):
        rng = np.random.default_rng(15)
        x = ag.Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        g = ag.Tensor(rng.normal(size=(6,)), requires_grad=True)
        b = ag.Tensor(rng.normal(size=(6,)), requires_grad=True)
        w = rng.normal(size=(4, 6))
        check_op(lambda: ag.ssum(ag.mul(ag.layer_norm(x, g, b), ag.Tensor(w))), [x, g, b], tol=1e-5)


class TestBackendParity:
    """Numba and numpy kernels must agree to float64 roundoff."""

    @pytest.fixture
    def backends(self):
        if kernels.numba_backend is None:
            pytest.skip("numba unavailable")
        return kernels.numpy_backend, kernels.numba_backend

    def test_attn(self, backends):
        np_b, nb_b = backends
        rng = np.random.default_rng(20)
        q, k, v = (rng.normal(size=(3, 11, 4)) for _ in range(3))
        o1, a1 = np_b.attn_forward(q, k, v)
        o2, a2 = nb_b.attn_forward(q, k, v)
        np.testing.assert_allclose(o1, o2, atol=1e-12)
        dout = rng.normal(size=o1.shape)
        g1 = np_b.attn_backward(dout, a1, q, k, v)
        g2 = nb_b.attn_backward(dout, a2, q, k, v)
        for x, y in zip(g1, g2):
            np.testing.assert_allclose(x, y, atol=1e-12)

    def test_layernorm(self, backends):
        np_b, nb_b = backends
        rng = np.random.default_rng(21)
        x = rng.normal(size=(7, 5))
        g, b = rng.normal(size=5), rng.normal(size=5)
        y1, m1, r1 = np_b.layernorm_forward(x, g, b, 1e-5)
        y2, m2, r2 = nb_b.layernorm_forward(x, g, b, 1e-5)
        np.testing.assert_allclose(y1, y2, atol=1e-12)
        dy = rng.normal(size=y1.shape)
        for x1, x2 in zip(np_b.layernorm_backward(dy, x, g, m1, r1),
                          nb_b.layernorm_backward(dy, x, g, m2, r2)):
            np.testing.assert_allclose(x1, x2, atol=1e-12)

    def test_edge_softmax_and_segment_sum(self, backends):
        np_b, nb_b = backends
        rng = np.random.default_rng(22)
        logits = rng.normal(size=12)
        dst = rng.integers(0, 5, size=12).astype(np.int64)
        a1 = np_b.edge_softmax_forward(logits, dst, 5)
        a2 = nb_b.edge_softmax_forward(logits, dst, 5)
        np.testing.assert_allclose(a1, a2, atol=1e-12)
        da = rng.normal(size=12)
        np.testing.assert_allclose(
            np_b.edge_softmax_backward(da, a1, dst, 5),
            nb_b.edge_softmax_backward(da, a2, dst, 5), atol=1e-12)
        vals = rng.normal(size=(12, 3))
        np.testing.assert_allclose(
            np_b.segment_sum(vals, dst, 5), nb_b.segment_sum(vals, dst, 5), atol=1e-12)

    def test_empty_edge_sets(self, backends):
        for b in backends:
            empty = np.empty(0)
            dst = np.empty(0, dtype=np.int64)
            assert b.edge_softmax_forward(empty, dst, 3).shape == (0,)
            out = b.segment_sum(np.empty((0, 4)), dst, 3)
            np.testing.assert_array_equal(out, np.zeros((3, 4)))
