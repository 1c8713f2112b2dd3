"""Token augmentation laws, expert encoders vs closed-form oracles, gate
properties, MoE fusion and full-network gradient checks."""

import numpy as np
import pytest

from higformer import autograd as ag
from higformer.autograd import Tensor
from higformer.config import ConfigurationError, TrainConfig
from higformer.graphs import PlayerGraph, attach_identifiers
from higformer.layers import HeteroGAT, ParamSet
from higformer.model import HigformerModel
from higformer.player_net import PlayerNet, feature_transform


def small_config(**kw):
    base = dict(hidden_dim=8, output_dim=4, id_dim=2, n_layers=2, n_heads=2,
                stage1_steps=1, stage2_steps=1, batch_size=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def make_graph(n_nodes, edges, seed=0, feats=None):
    """edges: list of (src, dst, type, count)."""
    rng = np.random.default_rng(seed)
    g = PlayerGraph(
        match_id=1,
        player_ids=np.arange(100, 100 + n_nodes, dtype=np.int64),
        node_team=np.array([10] * (n_nodes // 2) + [20] * (n_nodes - n_nodes // 2), dtype=np.int64),
        node_type=np.array([0] * (n_nodes // 2) + [1] * (n_nodes - n_nodes // 2), dtype=np.int64),
        node_feat=feats if feats is not None else rng.poisson(3.0, size=(n_nodes, 10)).astype(float),
        edge_src=np.array([e[0] for e in edges], dtype=np.int64),
        edge_dst=np.array([e[1] for e in edges], dtype=np.int64),
        edge_type=np.array([e[2] for e in edges], dtype=np.int64),
        edge_count=np.array([float(e[3]) for e in edges]),
    )
    return attach_identifiers(g, 2)


@pytest.fixture
def net():
    params = ParamSet()
    rng = np.random.default_rng(7)
    return PlayerNet(params, rng, small_config())


class TestAugmentTokens:
    def test_token_count_is_nodes_plus_edges(self, net):
        g = make_graph(4, [(0, 1, 0, 3), (1, 2, 1, 1), (3, 0, 0, 2)])
        tokens = net.augment_tokens(g)
        assert tokens.shape[0] == 4 + 3
        g2 = make_graph(2, [(0, 1, 0, 1)])
        assert net.augment_tokens(g2).shape[0] == 3

    def test_edge_identifier_law(self, net):
        g = make_graph(3, [(0, 2, 1, 4)])
        tokens = net.augment_tokens(g)
        hidden = net.config.hidden_dim
        ids = g.identifiers
        p_k = net.params["player/tables/edge_type"].data[1]
        expected = ids[0] - ids[2] + p_k
        np.testing.assert_array_equal(tokens.data[3, hidden:], expected)

    def test_node_identifier_law(self, net):
        g = make_graph(3, [(0, 1, 0, 1)])
        tokens = net.augment_tokens(g)
        hidden = net.config.hidden_dim
        ids = g.identifiers
        table = net.params["player/tables/node_type"].data
        for v in range(3):
            expected = 2 * ids[v] + table[g.node_type[v]]
            np.testing.assert_array_equal(tokens.data[v, hidden:], expected)

    def test_direction_reversal_flips_identifier_component(self, net):
        hidden = net.config.hidden_dim
        g_fwd = make_graph(3, [(0, 2, 0, 2)])
        g_rev = make_graph(3, [(2, 0, 0, 2)])
        g_rev.identifiers = g_fwd.identifiers  # same node identifiers
        t_fwd = net.augment_tokens(g_fwd).data[3, hidden:]
        t_rev = net.augment_tokens(g_rev).data[3, hidden:]
        p_k = net.params["player/tables/edge_type"].data[0]
        np.testing.assert_allclose(t_fwd - p_k, -(t_rev - p_k), atol=1e-12)

    def test_dimension_mismatch_rejected(self, net):
        g = make_graph(3, [(0, 1, 0, 1)])
        g.identifiers = np.zeros((3, 5))  # wrong id width
        with pytest.raises(ConfigurationError, match="identifier dim"):
            net.augment_tokens(g)


class TestEncodeGlobal:
    def test_embeddings_mode_row_count(self, net):
        g = make_graph(5, [(0, 1, 0, 2), (2, 3, 1, 1)])
        out = net.encode_global(g)
        assert out.shape == (5, net.config.output_dim)

    def test_class_token_mode_single_row(self, net):
        g = make_graph(4, [(0, 1, 0, 2)])
        out = net.encode_global(g, mode="class_token")
        assert out.shape == (1, net.config.output_dim)

    def test_attention_rows_sum_to_one(self, net):
        g = make_graph(6, [(0, 1, 0, 2), (1, 2, 0, 1), (3, 4, 1, 2)])
        maps = []
        net.encode_global(g, collect_attn=maps)
        assert len(maps) == net.config.n_layers
        for m in maps:
            np.testing.assert_allclose(m.sum(axis=2), 1.0, atol=1e-6)

    def test_single_node_matches_manual_forward(self, net):
        """One isolated node: reimplement the whole encoder in plain numpy."""
        feats = np.array([[2.0, 0, 1, 0, 0, 0, 3, 5, 0, 1]])
        g = make_graph(1, [], feats=feats)
        P = {k: t.data for k, t in net.params.named("player/").items()}
        x = np.log1p(feats)
        token = np.concatenate([
            x @ P["player/global/feat_node_w"] + P["player/global/feat_node_b"],
            (g.identifiers[0] + g.identifiers[0]
             + P["player/tables/node_type"][g.node_type[0]])[None, :],
        ], axis=1)

        def layernorm(v, gain, bias):
            mu, var = v.mean(axis=1, keepdims=True), v.var(axis=1, keepdims=True)
            return (v - mu) / np.sqrt(var + 1e-5) * gain + bias

        def elu(v):
            return np.where(v > 0, v, np.expm1(np.minimum(v, 0)))

        pre = "player/global/enc"
        h = token @ P[f"{pre}/in_w"] + P[f"{pre}/in_b"]
        for l in range(net.config.n_layers):
            b = f"{pre}/block{l}"
            a = layernorm(h, P[f"{b}/ln1_g"], P[f"{b}/ln1_b"])
            # single token: attention output equals its own value projection
            v = a @ P[f"{b}/v_w"] + P[f"{b}/v_b"]
            h = h + v @ P[f"{b}/o_w"] + P[f"{b}/o_b"]
            f = layernorm(h, P[f"{b}/ln2_g"], P[f"{b}/ln2_b"])
            f = elu(f @ P[f"{b}/ffn1_w"] + P[f"{b}/ffn1_b"]) @ P[f"{b}/ffn2_w"] + P[f"{b}/ffn2_b"]
            h = h + f
        h = layernorm(h, P[f"{pre}/ln_g"], P[f"{pre}/ln_b"])
        expected = h @ P[f"{pre}/out_w"] + P[f"{pre}/out_b"]

        out = net.encode_global(g)
        np.testing.assert_allclose(out.data, expected, atol=1e-10)


class TestEncodeLocal:
    def test_self_loop_only_node(self, net):
        """A node with no in-edges reduces to elu(W_self x) per layer."""
        g = make_graph(2, [(0, 1, 0, 2)])  # node 0 has only its self-loop
        out = net.encode_local(g)
        P = net.params
        x = np.log1p(g.node_feat)
        h0 = x[0:1]
        for l, (d_in, d_out) in enumerate(zip([10, 8], [8, 4])):
            w_self = P[f"player/local/l{l}/msg2_w"].data
            h0 = np.where(h0 @ w_self > 0, h0 @ w_self, np.expm1(np.minimum(h0 @ w_self, 0)))
        np.testing.assert_allclose(out.data[0], h0[0], atol=1e-10)

    def test_two_node_closed_form(self):
        """One typed edge u->v: hand-computed attention layer within 1e-6."""
        params = ParamSet()
        rng = np.random.default_rng(3)
        gat = HeteroGAT(params, "gat", rng, dims=[4, 3], n_edge_types=2)
        x = rng.normal(size=(2, 4))
        count = 5.0
        out = gat.forward(Tensor(x), np.array([0]), np.array([1]),
                          np.array([0]), np.array([count]), 2)

        W_pass = params["gat/l0/msg0_w"].data
        W_self = params["gat/l0/msg2_w"].data
        W_att = params["gat/l0/att_w"].data
        a = params["gat/l0/att_a"].data[:, 0]

        def leaky(v):
            return v if v >= 0 else 0.2 * v

        def elu(v):
            return np.where(v > 0, v, np.expm1(np.minimum(v, 0)))

        h = x @ W_att
        # node 0: self-loop only -> alpha = 1
        expected0 = elu(x[0] @ W_self)
        # node 1: incoming pass edge from 0 plus its self-loop
        logit_pass = leaky(float(np.concatenate([h[1], h[0]]) @ a)) + np.log1p(count)
        logit_self = leaky(float(np.concatenate([h[1], h[1]]) @ a)) + np.log1p(1.0)
        mx = max(logit_pass, logit_self)
        e_pass, e_self = np.exp(logit_pass - mx), np.exp(logit_self - mx)
        alpha_pass = e_pass / (e_pass + e_self)
        alpha_self = e_self / (e_pass + e_self)
        expected1 = elu(alpha_pass * (x[0] @ W_pass) + alpha_self * (x[1] @ W_self))

        np.testing.assert_allclose(out.data[0], expected0, atol=1e-6)
        np.testing.assert_allclose(out.data[1], expected1, atol=1e-6)

    def test_unused_edge_type_gets_zero_gradient(self, net):
        """No defense edges -> defense message weights receive no gradient."""
        g = make_graph(4, [(0, 1, 0, 2), (1, 2, 0, 1)])  # pass edges only
        out = net.encode_local(g)
        ag.ssum(ag.mul(out, Tensor(np.random.default_rng(0).normal(size=out.shape)))).backward()
        for l in range(2):
            defense = net.params[f"player/local/l{l}/msg1_w"]
            assert defense.grad is None or np.abs(defense.grad).max() == 0.0
            used = net.params[f"player/local/l{l}/msg0_w"]
            assert used.grad is not None and np.abs(used.grad).max() > 0


class TestGate:
    def test_rows_sum_to_one(self, net):
        rng = np.random.default_rng(1)
        w = net.gate_weights(rng.poisson(4.0, size=(7, 10)).astype(float))
        assert w.shape == (7, 2)
        np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-6)
        assert (w.data >= 0).all()

    def test_identical_features_identical_weights(self, net):
        feats = np.tile([1.0, 2, 0, 0, 4, 0, 1, 9, 0, 0], (3, 1))
        w = net.gate_weights(feats).data
        assert (w[0] == w[1]).all() and (w[1] == w[2]).all()


class TestFuse:
    def test_degenerate_weights_reproduce_experts(self, net):
        rng = np.random.default_rng(2)
        zg = Tensor(rng.normal(size=(5, 4)))
        zl = Tensor(rng.normal(size=(5, 4)))
        all_global = PlayerNet.fuse(zg, zl, Tensor(np.tile([1.0, 0.0], (5, 1))))
        all_local = PlayerNet.fuse(zg, zl, Tensor(np.tile([0.0, 1.0], (5, 1))))
        assert (all_global.data == zg.data).all()
        assert (all_local.data == zl.data).all()

    def test_midpoint_weights(self, net):
        rng = np.random.default_rng(3)
        zg = Tensor(rng.normal(size=(4, 4)))
        zl = Tensor(rng.normal(size=(4, 4)))
        mid = PlayerNet.fuse(zg, zl, Tensor(np.tile([0.5, 0.5], (4, 1))))
        np.testing.assert_allclose(mid.data, (zg.data + zl.data) / 2, atol=1e-12)

    def test_random_weights_elementwise_oracle(self, net):
        rng = np.random.default_rng(4)
        zg, zl = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        p = rng.uniform(0.1, 0.9, size=(6, 1))
        weights = np.concatenate([p, 1 - p], axis=1)
        fused = PlayerNet.fuse(Tensor(zg), Tensor(zl), Tensor(weights))
        expected = np.empty_like(zg)
        for i in range(6):
            for j in range(4):
                expected[i, j] = weights[i, 0] * zg[i, j] + weights[i, 1] * zl[i, j]
        np.testing.assert_allclose(fused.data, expected, atol=1e-12)

    def test_shape_mismatch_rejected(self, net):
        with pytest.raises(ConfigurationError):
            PlayerNet.fuse(Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 4))),
                           Tensor(np.zeros((3, 2))))


class TestPermutationEquivariance:
    def permuted(self, g, perm):
        inv = np.argsort(perm)
        g2 = PlayerGraph(
            match_id=g.match_id,
            player_ids=g.player_ids[perm],
            node_team=g.node_team[perm],
            node_type=g.node_type[perm],
            node_feat=g.node_feat[perm],
            edge_src=inv[g.edge_src],
            edge_dst=inv[g.edge_dst],
            edge_type=g.edge_type.copy(),
            edge_count=g.edge_count.copy(),
            identifiers=g.identifiers[perm],
        )
        return g2

    def test_both_encoders_equivariant(self, net):
        g = make_graph(6, [(0, 1, 0, 3), (1, 2, 0, 1), (3, 4, 1, 2), (5, 0, 1, 1)])
        perm = np.array([3, 0, 5, 1, 4, 2])
        g2 = self.permuted(g, perm)
        for encode in (net.encode_global, net.encode_local):
            out1 = encode(g).data
            out2 = encode(g2).data
            np.testing.assert_allclose(out2, out1[perm], atol=1e-9)


def relative_gradient_error(analytic, fd):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-300)
    return np.where(denom > 1e-4, np.abs(analytic - fd) / denom, np.abs(analytic - fd))


class TestGradientCheck:
    def test_full_player_net_finite_differences(self):
        """Analytic grads of the fused output vs central differences, all params."""
        config = small_config()
        model = HigformerModel(config, team_ids=[10, 20], seed=5)
        g = make_graph(4, [(0, 1, 0, 3), (2, 3, 1, 1), (1, 2, 0, 2)], seed=6)
        rng = np.random.default_rng(8)
        probe = rng.normal(size=(4, config.output_dim))

        def scalar():
            return float(ag.ssum(ag.mul(model.player.forward(g)["fused"], Tensor(probe))).data)

        model.params.zero_grad()
        out = ag.ssum(ag.mul(model.player.forward(g)["fused"], Tensor(probe)))
        out.backward()

        h = 1e-6
        checked = 0
        for name, t in model.params.named("player/").items():
            grad = t.grad if t.grad is not None else np.zeros_like(t.data)
            fd = np.zeros_like(t.data)
            flat, fdf = t.data.reshape(-1), fd.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = scalar()
                flat[i] = orig - h
                dn = scalar()
                flat[i] = orig
                fdf[i] = (up - dn) / (2 * h)
            err = relative_gradient_error(grad, fd)
            assert err.max() <= 1e-3, f"{name}: max rel err {err.max():.2e}"
            checked += flat.size
        assert checked > 1000
