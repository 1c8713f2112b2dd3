"""Model facade: parameter groups, team encoding and match-level assembly.

Match-time forward passes consume precomputed per-match expert embeddings
(the offline store) rather than re-encoding graphs, matching how the
two-stage trainer and the service operate. The gate stays live so it can
re-weight the stored expert pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import TrainConfig
from .data import MatchRecord
from .graphs import TeamGraph
from .layers import ParamSet
from .match_net import MatchNet, MatchPrediction, classify
from .player_net import PlayerNet, feature_transform
from .team_net import TeamNet

PARAM_GROUPS = {
    "type_tables": ("player/tables/",),
    "global_encoder": ("player/global/",),
    "local_encoder": ("player/local/",),
    "gate": ("player/gate/",),
    "team_embeddings": ("team/embeddings",),
    "team_encoder": ("team/enc/",),
    "match_net": ("match/",),
}
STAGE1_GROUPS = ("type_tables", "global_encoder", "local_encoder")
STAGE2_GROUPS = ("gate", "team_embeddings", "team_encoder", "match_net")


@dataclass
class RosterEntry:
    """One roster slot: whose embeddings feed it and from which past matches."""

    player_id: int
    side: int  # 0 home, 1 away
    history: list  # past match ids, oldest first
    source_player: int = -1  # embedding donor (substitutions); defaults to player_id

    def __post_init__(self):
        if self.source_player < 0:
            self.source_player = self.player_id


class HigformerModel:
    def __init__(self, config: TrainConfig, team_ids, seed: int | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed if seed is None else seed)
        self.params = ParamSet()
        self.player = PlayerNet(self.params, rng, config)
        self.team = TeamNet(self.params, rng, config, team_ids)
        self.match = MatchNet(self.params, rng, config)

    # -- parameter bookkeeping ----------------------------------------------

    def group_prefixes(self, groups) -> tuple:
        out = []
        for g in groups:
            out.extend(PARAM_GROUPS[g])
        return tuple(out)

    def state(self, groups=None) -> dict:
        prefixes = self.group_prefixes(groups) if groups else ("",)
        return self.params.state(prefixes)

    def load_state(self, state: dict):
        self.params.load_state(state)

    # -- team side ------------------------------------------------------------

    def encode_teams(self, graph: TeamGraph) -> Tensor:
        return self.team.encode(graph)

    # -- match-level forward ---------------------------------------------------

    def roster_tokens(self, entries, store, z_team: Tensor | None,
                      team_rows: tuple | None) -> tuple:
        """Build per-player tokens from pooled history plus team identity.

        Returns (tokens Tensor (n, d), history_lengths list). Cold-start
        slots pool to zero and receive the trained no-history indicator.
        """
        cfg = self.config
        n = len(entries)
        d = cfg.output_dim
        seg, zg, zl, counts = [], [], [], []
        lengths = []
        for i, entry in enumerate(entries):
            # histories not covered by the store (degraded/partial runs)
            # fall back towards cold start rather than failing the forward
            available = [m for m in entry.history if store.has(entry.source_player, m)]
            lengths.append(len(available))
            for mid in available:
                g, l, c = store.get(entry.source_player, mid)
                seg.append(i)
                zg.append(g)
                zl.append(l)
                counts.append(c)

        if seg:
            zg_t = Tensor(np.asarray(zg))
            zl_t = Tensor(np.asarray(zl))
            gates = self.player.forced_gate(len(seg))
            if gates is None:
                gates = self.player.gate_weights(
                    Tensor(feature_transform(np.asarray(counts), cfg.feature_transform))
                )
            fused = PlayerNet.fuse(zg_t, zl_t, gates)
            inv = np.zeros((n, 1))
            for i, ln in enumerate(lengths):
                if ln:
                    inv[i, 0] = 1.0 / ln
            pooled = ag.mul(ag.segment_sum(fused, np.asarray(seg, dtype=np.int64), n), Tensor(inv))
        else:
            pooled = Tensor(np.zeros((n, d)))

        cold = np.array([[0.0] if ln else [1.0] for ln in lengths])
        if cold.any():
            pooled = ag.add(pooled, ag.mul(Tensor(cold), self.match.cold_start_row()))

        if z_team is not None and team_rows is not None:
            rows = np.array([team_rows[e.side] for e in entries], dtype=np.int64)
            pooled = ag.add(pooled, ag.gather_rows(z_team, rows))
        return pooled, lengths

    def forward_match(self, entries, store, z_team: Tensor | None, team_rows: tuple | None,
                      collect_attn=None) -> dict:
        """Assemble tokens and run the comparison transformer + head."""
        cfg = self.config
        if cfg.use_player_net:
            tokens, lengths = self.roster_tokens(entries, store, z_team, team_rows)
            player_ids = [e.player_id for e in entries]
            sides = [e.side for e in entries]
        else:
            if z_team is None or team_rows is None:
                raise ValueError("team representations required when the player network is off")
            tokens = ag.gather_rows(z_team, np.array(team_rows, dtype=np.int64))
            player_ids, sides, lengths = [0, 1], [0, 1], []
        out = self.match.predict_scores(tokens, player_ids, sides, collect_attn)
        out["history_lengths"] = lengths
        return out

    def predict_match(self, match: MatchRecord, entries, store, z_team, team_rows) -> MatchPrediction:
        out = self.forward_match(entries, store, z_team, team_rows)
        y_hat = float(out["y_hat"].data.reshape(()))
        return MatchPrediction(
            match_id=match.match_id if match is not None else -1,
            y_hat=y_hat,
            outcome_class=classify(y_hat, self.config.thresholds),
            r=out["r"].data.copy(),
            b=out["b"].data.copy(),
            history_lengths={e.player_id: ln for e, ln in zip(entries, out["history_lengths"])},
        )


def roster_entries_for_match(dataset, match: MatchRecord, capacity: int,
                             cross_division: bool = True, substitutions: dict | None = None):
    """RosterEntry list for a real fixture, honouring embedding substitutions.

    ``substitutions`` maps outgoing player id -> incoming player id; the
    incoming player's history (as of this fixture) feeds the slot while
    the team identity stays with the host roster.
    """
    substitutions = substitutions or {}
    entries = []
    for side, roster in ((0, match.home_players), (1, match.away_players)):
        for pid in roster:
            source = substitutions.get(pid, pid)
            history = dataset.history_match_ids(source, match.match_id, capacity,
                                                cross_division=cross_division)
            entries.append(RosterEntry(player_id=pid, side=side, history=history,
                                       source_player=source))
    return entries
