"""Minimal reverse-mode autodiff over float64 numpy arrays.

A :class:`Tensor` wraps an ndarray and remembers how it was produced; calling
``backward`` on a scalar walks the tape in reverse topological order and
accumulates gradients into every tensor created with ``requires_grad=True``.
Only the operations needed by the encoders live here; the fused hot paths
(attention, layer norm, edge softmax, segment sum) delegate to
:mod:`higformer.kernels` in both directions.

Gradient correctness is pinned by finite-difference tests rather than by
construction, so keep new ops small and add them to the check suite.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, _backward=None, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = _backward
        self._parents = _parents

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Backpropagate from this tensor; defaults to d(self)/d(self)=1."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data
    if not _needs(a, b):
        return Tensor(out_data)

    def bw(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, _backward=bw, _parents=(a, b))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data
    if not _needs(a, b):
        return Tensor(out_data)

    def bw(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            b._accumulate(-_unbroadcast(g, b.data.shape))

    return Tensor(out_data, _backward=bw, _parents=(a, b))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data
    if not _needs(a, b):
        return Tensor(out_data)

    def bw(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, _backward=bw, _parents=(a, b))


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data * s
    if not _needs(a):
        return Tensor(out_data)

    def bw(g):
        a._accumulate(g * s)

    return Tensor(out_data, _backward=bw, _parents=(a,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data
    if not _needs(a, b):
        return Tensor(out_data)

    def bw(g):
        if a.requires_grad or a._parents:
            a._accumulate(g @ b.data.T)
        if b.requires_grad or b._parents:
            b._accumulate(a.data.T @ g)

    return Tensor(out_data, _backward=bw, _parents=(a, b))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)
    if not _needs(a):
        return Tensor(out_data)

    def bw(g):
        a._accumulate(g.reshape(a.data.shape))

    return Tensor(out_data, _backward=bw, _parents=(a,))


def concat(parts, axis=0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    if not any(_needs(p) for p in parts):
        return Tensor(out_data)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad or p._parents:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return Tensor(out_data, _backward=bw, _parents=tuple(parts))


def slice_rows(a, start, stop) -> Tensor:
    a = as_tensor(a)
    out_data = a.data[start:stop]
    if not _needs(a):
        return Tensor(np.array(out_data))

    def bw(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        a._accumulate(full)

    return Tensor(np.array(out_data), _backward=bw, _parents=(a,))


def gather_rows(a, idx) -> Tensor:
    """Select rows ``a[idx]``; gradient scatter-adds back (idx may repeat)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out_data = a.data[idx]
    if not _needs(a):
        return Tensor(out_data)

    def bw(g):
        values = g.reshape(len(idx), -1)
        a._accumulate(kernels.segment_sum(values, idx, a.data.shape[0]).reshape(a.data.shape))

    return Tensor(out_data, _backward=bw, _parents=(a,))


def segment_sum(values, seg, n_segments) -> Tensor:
    values = as_tensor(values)
    seg = np.asarray(seg, dtype=np.int64)
    out_data = kernels.segment_sum(values.data, seg, n_segments)
    if not _needs(values):
        return Tensor(out_data)

    def bw(g):
        values._accumulate(g[seg])

    return Tensor(out_data, _backward=bw, _parents=(values,))


def edge_softmax(logits, dst, n_nodes) -> Tensor:
    """Softmax of 1-D edge logits grouped by destination node."""
    logits = as_tensor(logits)
    dst = np.asarray(dst, dtype=np.int64)
    alpha = kernels.edge_softmax_forward(logits.data, dst, n_nodes)
    if not _needs(logits):
        return Tensor(alpha)

    def bw(g):
        logits._accumulate(kernels.edge_softmax_backward(g, alpha, dst, n_nodes))

    return Tensor(alpha, _backward=bw, _parents=(logits,))


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out_data = ex / ex.sum(axis=axis, keepdims=True)
    if not _needs(a):
        return Tensor(out_data)

    def bw(g):
        dot = np.sum(g * out_data, axis=axis, keepdims=True)
        a._accumulate(out_data * (g - dot))

    return Tensor(out_data, _backward=bw, _parents=(a,))


def attention(q, k, v, n_heads: int, collect=None) -> Tensor:
    """Fused multi-head scaled-dot-product attention.

    ``q``, ``k``, ``v`` are (n_tokens, dim) with ``dim % n_heads == 0``.
    When ``collect`` is a list, the (heads, n, n) attention weights are
    appended to it (detached copy) for later inspection.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    n, dm = q.data.shape
    dh = dm // n_heads
    if dh * n_heads != dm:
        raise ValueError(f"dim {dm} not divisible by {n_heads} heads")

    def split(x):
        return np.ascontiguousarray(x.reshape(n, n_heads, dh).transpose(1, 0, 2))

    q3, k3, v3 = split(q.data), split(k.data), split(v.data)
    out3, attn = kernels.attn_forward(q3, k3, v3)
    out_data = out3.transpose(1, 0, 2).reshape(n, dm)
    if collect is not None:
        collect.append(attn.copy())
    if not _needs(q, k, v):
        return Tensor(out_data)

    def bw(g):
        g3 = np.ascontiguousarray(g.reshape(n, n_heads, dh).transpose(1, 0, 2))
        dq3, dk3, dv3 = kernels.attn_backward(g3, attn, q3, k3, v3)
        if q.requires_grad or q._parents:
            q._accumulate(dq3.transpose(1, 0, 2).reshape(n, dm))
        if k.requires_grad or k._parents:
            k._accumulate(dk3.transpose(1, 0, 2).reshape(n, dm))
        if v.requires_grad or v._parents:
            v._accumulate(dv3.transpose(1, 0, 2).reshape(n, dm))

    return Tensor(out_data, _backward=bw, _parents=(q, k, v))


def layer_norm(x, g, b, eps: float = 1e-5) -> Tensor:
    x, g, b = as_tensor(x), as_tensor(g), as_tensor(b)
    y, mean, rstd = kernels.layernorm_forward(x.data, g.data, b.data, eps)
    if not _needs(x, g, b):
        return Tensor(y)

    def bw(grad):
        dx, dg, db = kernels.layernorm_backward(grad, x.data, g.data, mean, rstd)
        if x.requires_grad or x._parents:
            x._accumulate(dx)
        if g.requires_grad or g._parents:
            g._accumulate(dg)
        if b.requires_grad or b._parents:
            b._accumulate(db)

    return Tensor(y, _backward=bw, _parents=(x, g, b))


def elu(a) -> Tensor:
    a = as_tensor(a)
    neg = np.expm1(np.minimum(a.data, 0.0))
    out_data = np.where(a.data > 0.0, a.data, neg)
    if not _needs(a):
        return Tensor(out_data)

    def bw(g):
        a._accumulate(g * np.where(a.data > 0.0, 1.0, neg + 1.0))

    return Tensor(out_data, _backward=bw, _parents=(a,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    out_data = np.where(a.data >= 0.0, a.data, a.data * slope)
    if not _needs(a):
        return Tensor(out_data)

    def bw(g):
        a._accumulate(g * np.where(a.data >= 0.0, 1.0, slope))

    return Tensor(out_data, _backward=bw, _parents=(a,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.empty_like(a.data)
    pos = a.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    if not _needs(a):
        return Tensor(out_data)

    def bw(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, _backward=bw, _parents=(a,))


def mean0(a) -> Tensor:
    """Mean over axis 0, returning a (dim,) vector."""
    a = as_tensor(a)
    out_data = a.data.mean(axis=0)
    if not _needs(a):
        return Tensor(out_data)
    n = a.data.shape[0]

    def bw(g):
        a._accumulate(np.broadcast_to(g / n, a.data.shape).copy())

    return Tensor(out_data, _backward=bw, _parents=(a,))


def ssum(a) -> Tensor:
    """Sum all entries to a 0-d scalar tensor."""
    a = as_tensor(a)
    out_data = a.data.sum()
    if not _needs(a):
        return Tensor(out_data)

    def bw(g):
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return Tensor(out_data, _backward=bw, _parents=(a,))


def cross_entropy(logits, target: int) -> Tensor:
    """Negative log softmax probability of ``target``; logits is (n_classes,)."""
    logits = as_tensor(logits)
    z = logits.data
    mx = z.max()
    lse = mx + math.log(np.exp(z - mx).sum())
    out_data = np.asarray(lse - z[target])
    if not _needs(logits):
        return Tensor(out_data)

    def bw(g):
        p = np.exp(z - lse)
        p[target] -= 1.0
        logits._accumulate(g * p)

    return Tensor(out_data, _backward=bw, _parents=(logits,))
