"""Parameter registry and the encoder building blocks.

Weight matrices initialise uniform with fan-in scaling; embeddings and
class tokens initialise from a small normal (std 0.02); biases start at
zero. All parameters are float64 tensors living in a flat name -> Tensor
registry so checkpointing, freezing and the optimizer can select by
prefix.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ConfigurationError


class NumericError(RuntimeError):
    """Non-finite activation or loss with a diagnostic message."""


class ParamSet:
    def __init__(self):
        self._params = {}

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def named(self, prefix: str = "") -> dict:
        return {k: v for k, v in self._params.items() if k.startswith(prefix)}

    def select(self, prefixes) -> list:
        out = []
        for k in sorted(self._params):
            if any(k.startswith(p) for p in prefixes):
                out.append((k, self._params[k]))
        return out

    def zero_grad(self, prefixes=("",)):
        for _, t in self.select(prefixes):
            t.grad = None

    def state(self, prefixes=("",)) -> dict:
        return {k: t.data.copy() for k, t in self.select(prefixes)}

    def load_state(self, state: dict):
        for k, v in state.items():
            if k not in self._params:
                raise ConfigurationError(f"checkpoint parameter {k!r} has no slot in this model")
            slot = self._params[k]
            if slot.data.shape != v.shape:
                raise ConfigurationError(
                    f"shape mismatch for {k!r}: model {slot.data.shape}, checkpoint {v.shape}"
                )
            slot.data = np.array(v, dtype=np.float64)


def fan_in_uniform(rng, fan_in: int, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def small_normal(rng, shape, std: float = 0.02):
    return rng.normal(0.0, std, size=shape)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = ag.matmul(x, w)
    return ag.add(y, b) if b is not None else y


def add_linear_params(params: ParamSet, rng, prefix: str, d_in: int, d_out: int):
    params.add(f"{prefix}_w", fan_in_uniform(rng, d_in, (d_in, d_out)))
    params.add(f"{prefix}_b", np.zeros(d_out))


class TransformerEncoder:
    """Pre-norm residual self-attention stack with in/out projections."""

    def __init__(self, params: ParamSet, prefix: str, rng, in_dim: int, model_dim: int,
                 out_dim: int, n_layers: int, n_heads: int, ffn_mult: int = 2):
        self.params = params
        self.prefix = prefix
        self.n_layers = n_layers
        self.n_heads = n_heads
        add_linear_params(params, rng, f"{prefix}/in", in_dim, model_dim)
        for l in range(n_layers):
            p = f"{prefix}/block{l}"
            params.add(f"{p}/ln1_g", np.ones(model_dim))
            params.add(f"{p}/ln1_b", np.zeros(model_dim))
            for proj in ("q", "k", "v", "o"):
                add_linear_params(params, rng, f"{p}/{proj}", model_dim, model_dim)
            params.add(f"{p}/ln2_g", np.ones(model_dim))
            params.add(f"{p}/ln2_b", np.zeros(model_dim))
            add_linear_params(params, rng, f"{p}/ffn1", model_dim, ffn_mult * model_dim)
            add_linear_params(params, rng, f"{p}/ffn2", ffn_mult * model_dim, model_dim)
        params.add(f"{prefix}/ln_g", np.ones(model_dim))
        params.add(f"{prefix}/ln_b", np.zeros(model_dim))
        add_linear_params(params, rng, f"{prefix}/out", model_dim, out_dim)

    def forward(self, tokens: Tensor, collect_attn: list | None = None) -> Tensor:
        P = self.params
        pre = self.prefix
        h = linear(tokens, P[f"{pre}/in_w"], P[f"{pre}/in_b"])
        for l in range(self.n_layers):
            p = f"{pre}/block{l}"
            a = ag.layer_norm(h, P[f"{p}/ln1_g"], P[f"{p}/ln1_b"])
            att = ag.attention(
                linear(a, P[f"{p}/q_w"], P[f"{p}/q_b"]),
                linear(a, P[f"{p}/k_w"], P[f"{p}/k_b"]),
                linear(a, P[f"{p}/v_w"], P[f"{p}/v_b"]),
                self.n_heads,
                collect=collect_attn,
            )
            h = ag.add(h, linear(att, P[f"{p}/o_w"], P[f"{p}/o_b"]))
            f = ag.layer_norm(h, P[f"{p}/ln2_g"], P[f"{p}/ln2_b"])
            f = ag.elu(linear(f, P[f"{p}/ffn1_w"], P[f"{p}/ffn1_b"]))
            f = linear(f, P[f"{p}/ffn2_w"], P[f"{p}/ffn2_b"])
            h = ag.add(h, f)
        h = ag.layer_norm(h, P[f"{pre}/ln_g"], P[f"{pre}/ln_b"])
        return linear(h, P[f"{pre}/out_w"], P[f"{pre}/out_b"])


def _with_self_loops(edge_src, edge_dst, edge_type, edge_count, n_nodes, self_type):
    loop = np.arange(n_nodes, dtype=np.int64)
    src = np.concatenate([edge_src, loop])
    dst = np.concatenate([edge_dst, loop])
    types = np.concatenate([edge_type, np.full(n_nodes, self_type, dtype=np.int64)])
    counts = np.concatenate([edge_count, np.ones(n_nodes)])
    return src, dst, types, counts


class HeteroGAT:
    """Typed-edge attention layers; self-loops carry their own weight matrix.

    Attention logits are leaky-relu scores over shared attention
    projections, shifted by log1p(interaction count) so heavier
    interactions attract proportionally more unnormalised weight, and
    normalised over each node's in-neighbourhood (self-loop included).
    """

    LEAK = 0.2

    def __init__(self, params: ParamSet, prefix: str, rng, dims, n_edge_types: int):
        self.params = params
        self.prefix = prefix
        self.dims = list(dims)
        self.n_edge_types = n_edge_types
        self.self_type = n_edge_types
        for l in range(len(self.dims) - 1):
            d_in, d_out = self.dims[l], self.dims[l + 1]
            for k in range(n_edge_types + 1):
                params.add(f"{prefix}/l{l}/msg{k}_w", fan_in_uniform(rng, d_in, (d_in, d_out)))
            params.add(f"{prefix}/l{l}/att_w", fan_in_uniform(rng, d_in, (d_in, d_out)))
            params.add(f"{prefix}/l{l}/att_a", fan_in_uniform(rng, 2 * d_out, (2 * d_out, 1)))

    def forward(self, x: Tensor, edge_src, edge_dst, edge_type, edge_count, n_nodes: int) -> Tensor:
        P = self.params
        src, dst, types, counts = _with_self_loops(
            edge_src, edge_dst, edge_type, edge_count, n_nodes, self.self_type
        )
        count_bias = Tensor(np.log1p(counts))
        for l in range(len(self.dims) - 1):
            p = f"{self.prefix}/l{l}"
            h_att = ag.matmul(x, P[f"{p}/att_w"])
            pair = ag.concat([ag.gather_rows(h_att, dst), ag.gather_rows(h_att, src)], axis=1)
            logits = ag.leaky_relu(ag.matmul(pair, P[f"{p}/att_a"]), self.LEAK)
            logits = ag.add(ag.reshape(logits, (len(src),)), count_bias)
            alpha = ag.reshape(ag.edge_softmax(logits, dst, n_nodes), (len(src), 1))
            total = None
            for k in range(self.n_edge_types + 1):
                mask = np.nonzero(types == k)[0]
                if not len(mask):
                    continue
                messages = ag.gather_rows(ag.matmul(x, P[f"{p}/msg{k}_w"]), src[mask])
                weighted = ag.mul(ag.gather_rows(alpha, mask), messages)
                part = ag.segment_sum(weighted, dst[mask], n_nodes)
                total = part if total is None else ag.add(total, part)
            x = ag.elu(total)
        return x


class HomoGAT:
    """Standard single-type GAT with self-loops and an optional additive
    edge-scalar bias (learnable scale) on the attention logits."""

    LEAK = 0.2

    def __init__(self, params: ParamSet, prefix: str, rng, dims):
        self.params = params
        self.prefix = prefix
        self.dims = list(dims)
        for l in range(len(self.dims) - 1):
            d_in, d_out = self.dims[l], self.dims[l + 1]
            params.add(f"{prefix}/l{l}/w", fan_in_uniform(rng, d_in, (d_in, d_out)))
            params.add(f"{prefix}/l{l}/a", fan_in_uniform(rng, 2 * d_out, (2 * d_out, 1)))
            params.add(f"{prefix}/l{l}/rate_scale", np.ones(1))

    def forward(self, x: Tensor, edge_src, edge_dst, edge_scalar, n_nodes: int,
                use_scalar_bias: bool = True) -> Tensor:
        P = self.params
        loop = np.arange(n_nodes, dtype=np.int64)
        src = np.concatenate([edge_src, loop])
        dst = np.concatenate([edge_dst, loop])
        scalars = Tensor(np.concatenate([edge_scalar, np.zeros(n_nodes)]))
        for l in range(len(self.dims) - 1):
            p = f"{self.prefix}/l{l}"
            h = ag.matmul(x, P[f"{p}/w"])
            pair = ag.concat([ag.gather_rows(h, dst), ag.gather_rows(h, src)], axis=1)
            logits = ag.reshape(ag.leaky_relu(ag.matmul(pair, P[f"{p}/a"]), self.LEAK), (len(src),))
            if use_scalar_bias:
                logits = ag.add(logits, ag.mul(scalars, P[f"{p}/rate_scale"]))
            alpha = ag.reshape(ag.edge_softmax(logits, dst, n_nodes), (len(src), 1))
            weighted = ag.mul(alpha, ag.gather_rows(h, src))
            x = ag.elu(ag.segment_sum(weighted, dst, n_nodes))
        return x


def check_finite(t: Tensor, what: str):
    if not np.isfinite(t.data).all():
        raise NumericError(f"non-finite values in {what}")
    return t
