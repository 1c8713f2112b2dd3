"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is selected once at import time from the ``HIGFORMER_NUMBA``
environment variable: ``0``/``false``/``off`` forces the numpy path,
anything else (including unset) uses numba when it is importable.
Both backends expose the same functions on the ``numpy_backend`` /
``numba_backend`` namespaces so they can be benchmarked against each
other (see ``benchmarks/bench_kernels.py``).

All kernels operate on float64 arrays. Shapes:

* attention:      q, k, v are (heads, n_tokens, head_dim)
* layer norm:     x is (n_tokens, dim), gain/bias are (dim,)
* edge softmax:   logits is (n_edges,), dst is int64 (n_edges,),
                  normalisation groups edges by destination node
* segment sum:    values is (n_edges, dim), seg is int64 (n_edges,)
"""

from __future__ import annotations

import math
import os
import types

import numpy as np

__all__ = [
    "backend_name",
    "attn_forward",
    "attn_backward",
    "layernorm_forward",
    "layernorm_backward",
    "edge_softmax_forward",
    "edge_softmax_backward",
    "segment_sum",
    "numpy_backend",
    "numba_backend",
]


# ---------------------------------------------------------------------------
# pure numpy implementations
# ---------------------------------------------------------------------------


def _np_attn_forward(q, k, v):
    scale = 1.0 / math.sqrt(q.shape[2])
    s = np.matmul(q, k.transpose(0, 2, 1)) * scale
    s -= s.max(axis=2, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=2, keepdims=True)
    out = np.matmul(s, v)
    return out, s


def _np_attn_backward(dout, attn, q, k, v):
    scale = 1.0 / math.sqrt(q.shape[2])
    dv = np.matmul(attn.transpose(0, 2, 1), dout)
    da = np.matmul(dout, v.transpose(0, 2, 1))
    ds = attn * (da - np.sum(da * attn, axis=2, keepdims=True))
    dq = np.matmul(ds, k) * scale
    dk = np.matmul(ds.transpose(0, 2, 1), q) * scale
    return dq, dk, dv


def _np_layernorm_forward(x, g, b, eps):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * g + b, mean, rstd


def _np_layernorm_backward(dy, x, g, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dg = np.sum(dy * xhat, axis=0)
    db = np.sum(dy, axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, dg, db


def _np_edge_softmax_forward(logits, dst, n_nodes):
    mx = np.full(n_nodes, -np.inf)
    np.maximum.at(mx, dst, logits)
    ex = np.exp(logits - mx[dst])
    den = np.zeros(n_nodes)
    np.add.at(den, dst, ex)
    return ex / den[dst]


def _np_edge_softmax_backward(dalpha, alpha, dst, n_nodes):
    dot = np.zeros(n_nodes)
    np.add.at(dot, dst, dalpha * alpha)
    return alpha * (dalpha - dot[dst])


def _np_segment_sum(values, seg, n_segments):
    out = np.zeros((n_segments, values.shape[1]))
    np.add.at(out, seg, values)
    return out


numpy_backend = types.SimpleNamespace(
    attn_forward=_np_attn_forward,
    attn_backward=_np_attn_backward,
    layernorm_forward=_np_layernorm_forward,
    layernorm_backward=_np_layernorm_backward,
    edge_softmax_forward=_np_edge_softmax_forward,
    edge_softmax_backward=_np_edge_softmax_backward,
    segment_sum=_np_segment_sum,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

numba_backend = None

try:
    import numba

    @numba.njit(cache=True)
    def _nb_attn_forward(q, k, v):
        h_n, n, d = q.shape
        scale = 1.0 / math.sqrt(d)
        out = np.empty((h_n, n, d))
        attn = np.empty((h_n, n, n))
        for h in range(h_n):
            s = np.dot(np.ascontiguousarray(q[h]), np.ascontiguousarray(k[h]).T)
            for i in range(n):
                mx = -1.0e300
                for j in range(n):
                    sv = s[i, j] * scale
                    s[i, j] = sv
                    if sv > mx:
                        mx = sv
                den = 0.0
                for j in range(n):
                    e = math.exp(s[i, j] - mx)
                    s[i, j] = e
                    den += e
                inv = 1.0 / den
                for j in range(n):
                    s[i, j] *= inv
            attn[h] = s
            out[h] = np.dot(s, np.ascontiguousarray(v[h]))
        return out, attn

    @numba.njit(cache=True)
    def _nb_attn_backward(dout, attn, q, k, v):
        h_n, n, d = q.shape
        scale = 1.0 / math.sqrt(d)
        dq = np.empty((h_n, n, d))
        dk = np.empty((h_n, n, d))
        dv = np.empty((h_n, n, d))
        for h in range(h_n):
            a = np.ascontiguousarray(attn[h])
            g = np.ascontiguousarray(dout[h])
            dv[h] = np.dot(a.T, g)
            da = np.dot(g, np.ascontiguousarray(v[h]).T)
            # softmax jacobian, scaled: ds = a * (da - rowsum(da * a))
            for i in range(n):
                dot = 0.0
                for j in range(n):
                    dot += da[i, j] * a[i, j]
                for j in range(n):
                    da[i, j] = a[i, j] * (da[i, j] - dot) * scale
            dq[h] = np.dot(da, np.ascontiguousarray(k[h]))
            dk[h] = np.dot(da.T, np.ascontiguousarray(q[h]))
        return dq, dk, dv

    @numba.njit(cache=True)
    def _nb_layernorm_forward(x, g, b, eps):
        n, d = x.shape
        y = np.empty((n, d))
        mean = np.empty(n)
        rstd = np.empty(n)
        for i in range(n):
            m = 0.0
            for j in range(d):
                m += x[i, j]
            m /= d
            var = 0.0
            for j in range(d):
                diff = x[i, j] - m
                var += diff * diff
            var /= d
            r = 1.0 / math.sqrt(var + eps)
            mean[i] = m
            rstd[i] = r
            for j in range(d):
                y[i, j] = (x[i, j] - m) * r * g[j] + b[j]
        return y, mean, rstd

    @numba.njit(cache=True)
    def _nb_layernorm_backward(dy, x, g, mean, rstd):
        n, d = x.shape
        dx = np.empty((n, d))
        dg = np.zeros(d)
        db = np.zeros(d)
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                xhat = (x[i, j] - mean[i]) * rstd[i]
                dxh = dy[i, j] * g[j]
                m1 += dxh
                m2 += dxh * xhat
                dg[j] += dy[i, j] * xhat
                db[j] += dy[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                xhat = (x[i, j] - mean[i]) * rstd[i]
                dxh = dy[i, j] * g[j]
                dx[i, j] = (dxh - m1 - xhat * m2) * rstd[i]
        return dx, dg, db

    @numba.njit(cache=True)
    def _nb_edge_softmax_forward(logits, dst, n_nodes):
        e_n = logits.shape[0]
        mx = np.full(n_nodes, -1.0e300)
        for e in range(e_n):
            if logits[e] > mx[dst[e]]:
                mx[dst[e]] = logits[e]
        den = np.zeros(n_nodes)
        alpha = np.empty(e_n)
        for e in range(e_n):
            ex = math.exp(logits[e] - mx[dst[e]])
            alpha[e] = ex
            den[dst[e]] += ex
        for e in range(e_n):
            alpha[e] /= den[dst[e]]
        return alpha

    @numba.njit(cache=True)
    def _nb_edge_softmax_backward(dalpha, alpha, dst, n_nodes):
        e_n = alpha.shape[0]
        dot = np.zeros(n_nodes)
        for e in range(e_n):
            dot[dst[e]] += dalpha[e] * alpha[e]
        dlogits = np.empty(e_n)
        for e in range(e_n):
            dlogits[e] = alpha[e] * (dalpha[e] - dot[dst[e]])
        return dlogits

    @numba.njit(cache=True)
    def _nb_segment_sum(values, seg, n_segments):
        e_n, d = values.shape
        out = np.zeros((n_segments, d))
        for e in range(e_n):
            s = seg[e]
            for j in range(d):
                out[s, j] += values[e, j]
        return out

    numba_backend = types.SimpleNamespace(
        attn_forward=_nb_attn_forward,
        attn_backward=_nb_attn_backward,
        layernorm_forward=_nb_layernorm_forward,
        layernorm_backward=_nb_layernorm_backward,
        edge_softmax_forward=_nb_edge_softmax_forward,
        edge_softmax_backward=_nb_edge_softmax_backward,
        segment_sum=_nb_segment_sum,
    )
except ImportError:  # pragma: no cover - numba is an install-time extra
    numba_backend = None


def _select_backend():
    flag = os.environ.get("HIGFORMER_NUMBA", "auto").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return "numpy", numpy_backend
    if numba_backend is None:
        return "numpy", numpy_backend
    return "numba", numba_backend


_BACKEND_NAME, _ACTIVE = _select_backend()


def backend_name() -> str:
    """Name of the kernel backend selected at import ('numba' or 'numpy')."""
    return _BACKEND_NAME


attn_forward = _ACTIVE.attn_forward
attn_backward = _ACTIVE.attn_backward
layernorm_forward = _ACTIVE.layernorm_forward
layernorm_backward = _ACTIVE.layernorm_backward
edge_softmax_forward = _ACTIVE.edge_softmax_forward
edge_softmax_backward = _ACTIVE.edge_softmax_backward
segment_sum = _ACTIVE.segment_sum
