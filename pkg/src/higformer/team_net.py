"""League-level team encoder over the winning-rate graph."""

from __future__ import annotations

import logging

import numpy as np

from .autograd import Tensor
from .config import ConfigurationError, TrainConfig
from .graphs import TeamGraph
from .layers import HomoGAT, ParamSet, small_normal

logger = logging.getLogger(__name__)


class TeamLookupError(KeyError):
    pass


class TeamNet:
    """Trainable per-team embeddings refined by a homogeneous GAT whose
    attention logits carry the head-to-head winning rate as a scaled
    additive bias."""

    def __init__(self, params: ParamSet, rng, config: TrainConfig, team_ids):
        self.params = params
        self.config = config
        self.team_ids = [int(t) for t in team_ids]
        self.index = {t: i for i, t in enumerate(self.team_ids)}
        hidden, out = config.hidden_dim, config.output_dim
        params.add("team/embeddings", small_normal(rng, (len(self.team_ids), hidden)))
        dims = [hidden] * config.n_layers + [out]
        self.encoder = HomoGAT(params, "team/enc", rng, dims)

    def encode(self, graph: TeamGraph) -> Tensor:
        """Encode every team in the graph; row order follows the table index."""
        for t in graph.team_ids:
            if int(t) not in self.index:
                raise ConfigurationError(f"team {int(t)} has no embedding table row")
        if set(self.index) - {int(t) for t in graph.team_ids}:
            raise ConfigurationError("team graph does not cover the embedding table")
        # remap graph edges into table index order
        remap = np.array([self.index[int(t)] for t in graph.team_ids], dtype=np.int64)
        src = remap[graph.edge_src]
        dst = remap[graph.edge_dst]
        connected = set(src.tolist()) | set(dst.tolist())
        isolated = [t for t, i in self.index.items() if i not in connected]
        if isolated:
            logger.info("teams with self-loop-only encoding (no head-to-head history): %s", isolated)
        return self.encoder.forward(
            self.params["team/embeddings"], src, dst, graph.edge_rate,
            len(self.team_ids), use_scalar_bias=self.config.team_rate_bias,
        )

    def rows_for(self, representation: Tensor, home_id: int, away_id: int):
        """Row indices of the two competing teams in the representation."""
        for team in (home_id, away_id):
            if team not in self.index:
                raise TeamLookupError(f"unknown team {team}")
        return self.index[home_id], self.index[away_id]


def lookup_match_teams(representation, index: dict, home_id: int, away_id: int):
    """Pure read of the two competing teams' encoded rows."""
    for team in (home_id, away_id):
        if team not in index:
            raise TeamLookupError(f"unknown team {team}")
    rep = representation.data if isinstance(representation, Tensor) else np.asarray(representation)
    return rep[index[home_id]].copy(), rep[index[away_id]].copy()
