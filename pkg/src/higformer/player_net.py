"""Per-match player encoder: tokenized global transformer, typed-edge local
GAT and the gating network that fuses the two expert outputs per player."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ConfigurationError, TrainConfig
from .data import N_EVENT_KINDS
from .graphs import PlayerGraph
from .layers import (
    HeteroGAT,
    ParamSet,
    TransformerEncoder,
    add_linear_params,
    check_finite,
    linear,
    small_normal,
)

N_NODE_TYPES = 2  # home, away
N_EDGE_TYPES = 2  # pass, defense

_COL0 = np.array([[1.0], [0.0]])
_COL1 = np.array([[0.0], [1.0]])


def feature_transform(counts: np.ndarray, mode: str) -> np.ndarray:
    return np.log1p(counts) if mode == "log1p" else np.asarray(counts, dtype=np.float64)


class PlayerNet:
    def __init__(self, params: ParamSet, rng, config: TrainConfig):
        self.params = params
        self.config = config
        d_id, hidden, out = config.id_dim, config.hidden_dim, config.output_dim
        token_dim = hidden + d_id

        params.add("player/tables/node_type", small_normal(rng, (N_NODE_TYPES, d_id)))
        params.add("player/tables/edge_type", small_normal(rng, (N_EDGE_TYPES, d_id)))
        add_linear_params(params, rng, "player/global/feat_node", N_EVENT_KINDS, hidden)
        add_linear_params(params, rng, "player/global/feat_edge", 1, hidden)
        params.add("player/global/class_token", small_normal(rng, (1, token_dim)))
        self.global_encoder = TransformerEncoder(
            params, "player/global/enc", rng,
            in_dim=token_dim, model_dim=hidden, out_dim=out,
            n_layers=config.n_layers, n_heads=config.n_heads, ffn_mult=config.ffn_mult,
        )
        gat_dims = [N_EVENT_KINDS] + [hidden] * (config.n_layers - 1) + [out]
        self.local_encoder = HeteroGAT(params, "player/local", rng, gat_dims, N_EDGE_TYPES)
        add_linear_params(params, rng, "player/gate/h", N_EVENT_KINDS, hidden)
        add_linear_params(params, rng, "player/gate/out", hidden, 2)

    # -- token construction ------------------------------------------------

    def augment_tokens(self, graph: PlayerGraph) -> Tensor:
        """(|V|+|E|) tokens: projected raw features ++ identifier part.

        Node identifier part is P_v + P_v + P_a (type a of the node);
        edge identifier part for u->v is P_u - P_v + P_k, which flips sign
        with edge direction.
        """
        if graph.identifiers is None:
            raise ConfigurationError("graph has no node identifiers attached")
        ids = graph.identifiers
        if ids.shape[1] != self.config.id_dim:
            raise ConfigurationError(
                f"identifier dim {ids.shape[1]} != configured id_dim {self.config.id_dim}"
            )
        P = self.params
        mode = self.config.feature_transform

        node_raw = Tensor(feature_transform(graph.node_feat, mode))
        node_feat = linear(node_raw, P["player/global/feat_node_w"], P["player/global/feat_node_b"])
        node_ident = ag.add(
            Tensor(ids + ids),
            ag.gather_rows(P["player/tables/node_type"], graph.node_type),
        )
        node_tokens = ag.concat([node_feat, node_ident], axis=1)
        if graph.n_edges == 0:
            return node_tokens

        edge_raw = Tensor(feature_transform(graph.edge_count.reshape(-1, 1), mode))
        edge_feat = linear(edge_raw, P["player/global/feat_edge_w"], P["player/global/feat_edge_b"])
        edge_ident = ag.add(
            Tensor(ids[graph.edge_src] - ids[graph.edge_dst]),
            ag.gather_rows(P["player/tables/edge_type"], graph.edge_type),
        )
        edge_tokens = ag.concat([edge_feat, edge_ident], axis=1)
        return ag.concat([node_tokens, edge_tokens], axis=0)

    # -- expert encoders ---------------------------------------------------

    def encode_global(self, graph: PlayerGraph, mode: str = "embeddings",
                      collect_attn: list | None = None) -> Tensor:
        """Transformer over all tokens.

        ``embeddings`` returns the |V| node rows (edge and class outputs are
        dropped); ``class_token`` prepends the trainable class token and
        returns its (1, d) output as the graph-level representation.
        """
        tokens = self.augment_tokens(graph)
        if mode == "class_token":
            tokens = ag.concat([self.params["player/global/class_token"], tokens], axis=0)
            out = self.global_encoder.forward(tokens, collect_attn)
            result = ag.slice_rows(out, 0, 1)
        elif mode == "embeddings":
            out = self.global_encoder.forward(tokens, collect_attn)
            result = ag.slice_rows(out, 0, graph.n_nodes)
        else:
            raise ConfigurationError(f"unknown encode mode {mode!r}")
        return check_finite(result, "global encoder output")

    def encode_local(self, graph: PlayerGraph) -> Tensor:
        x = Tensor(feature_transform(graph.node_feat, self.config.feature_transform))
        return self.local_encoder.forward(
            x, graph.edge_src, graph.edge_dst, graph.edge_type, graph.edge_count, graph.n_nodes
        )

    # -- mixture of experts --------------------------------------------------

    def gate_weights(self, counts: np.ndarray | Tensor) -> Tensor:
        """Two-layer perceptron + two-way softmax over per-player counts."""
        if not isinstance(counts, Tensor):
            counts = Tensor(feature_transform(np.atleast_2d(counts), self.config.feature_transform))
        P = self.params
        h = ag.elu(linear(counts, P["player/gate/h_w"], P["player/gate/h_b"]))
        return ag.softmax(linear(h, P["player/gate/out_w"], P["player/gate/out_b"]), axis=1)

    @staticmethod
    def fuse(z_global: Tensor, z_local: Tensor, weights: Tensor) -> Tensor:
        """Convex per-player combination of the two expert embeddings."""
        if z_global.shape != z_local.shape:
            raise ConfigurationError(
                f"expert shapes differ: {z_global.shape} vs {z_local.shape}"
            )
        if weights.shape != (z_global.shape[0], 2):
            raise ConfigurationError(f"gate weights shape {weights.shape} mismatch")
        w_glo = ag.matmul(weights, Tensor(_COL0))
        w_loc = ag.matmul(weights, Tensor(_COL1))
        return ag.add(ag.mul(w_glo, z_global), ag.mul(w_loc, z_local))

    def forced_gate(self, n: int) -> Tensor | None:
        """Constant gate for ablations: (1,0) without the local expert,
        (0,1) without the global expert, None when both are active."""
        cfg = self.config
        if cfg.use_global and cfg.use_local:
            return None
        row = [1.0, 0.0] if cfg.use_global else [0.0, 1.0]
        return Tensor(np.tile(row, (n, 1)))

    def forward(self, graph: PlayerGraph) -> dict:
        """Full fused per-player embeddings for one match graph."""
        cfg = self.config
        zeros = Tensor(np.zeros((graph.n_nodes, cfg.output_dim)))
        z_glo = self.encode_global(graph) if cfg.use_global else zeros
        z_loc = self.encode_local(graph) if cfg.use_local else zeros
        weights = self.forced_gate(graph.n_nodes)
        if weights is None:
            weights = self.gate_weights(
                Tensor(feature_transform(graph.node_feat, cfg.feature_transform))
            )
        return {
            "global": z_glo,
            "local": z_loc,
            "gate": weights,
            "fused": self.fuse(z_glo, z_loc, weights),
        }
