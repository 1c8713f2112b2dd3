"""History pooling, the match comparison transformer and the outcome head.

Rosters are sets: the transformer runs without positional encodings and
the network internally canonicalises token order by (side, player id), so
within-team permutations of the input roster produce bit-identical

predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ConfigurationError, TrainConfig
from .layers import ParamSet, TransformerEncoder, add_linear_params, linear, small_normal

CLASS_ORDER = ("lose", "draw", "win")  # ordinal, ascending
CE_CLASSES = ("win", "draw", "lose")  # cross-entropy head output order

TARGETS = {"win": 1.0, "draw": 0.5, "lose": 0.0}


class PredictionError(ValueError):
    pass


class DomainError(ValueError):
    pass


def outcome_to_target(label: str) -> float:
    """win -> 1.0, draw -> 0.5, lose -> 0.0 (home perspective)."""
    return TARGETS[label]


def classify(y_hat: float, thresholds=(4.0 / 7.0, 5.0 / 7.0)) -> str:
    """Threshold the home-win probability into lose / draw / win.

    Bands are half-open with ties going to the higher class: lose on
    [0, low), draw on [low, high), win on [high, 1].
    """
    if not 0.0 <= y_hat <= 1.0:
        raise DomainError(f"prediction {y_hat} outside [0, 1]")
    low, high = thresholds
    if y_hat < low:
        return "lose"
    if y_hat < high:
        return "draw"
    return "win"


@dataclass
class PooledPlayerEmbedding:
    player_id: int
    side: int  # 0 home, 1 away
    vector: np.ndarray
    history_length: int


@dataclass
class MatchPrediction:
    match_id: int
    y_hat: float
    outcome_class: str
    r: np.ndarray
    b: np.ndarray
    history_lengths: dict = field(default_factory=dict)

    def record(self) -> dict:
        return {
            "match_id": self.match_id,
            "y_hat": self.y_hat,
            "class": self.outcome_class,
            "r_norm": float(np.linalg.norm(self.r)),
            "b_norm": float(np.linalg.norm(self.b)),
            "history_lengths": {str(k): v for k, v in self.history_lengths.items()},
        }


def pool_history(vectors: list, dim: int) -> np.ndarray:
    """Elementwise mean of the per-match embeddings; empty -> zero vector."""
    if not vectors:
        return np.zeros(dim)
    return np.mean(np.asarray(vectors), axis=0)


class MatchNet:
    def __init__(self, params: ParamSet, rng, config: TrainConfig):
        self.params = params
        self.config = config
        d = config.output_dim
        heads = config.n_heads if d % config.n_heads == 0 else 1
        self.encoder = TransformerEncoder(
            params, "match/enc", rng, in_dim=d, model_dim=d, out_dim=d,
            n_layers=config.match_layers, n_heads=heads, ffn_mult=config.ffn_mult,
        )
        params.add("match/cold_start", small_normal(rng, (1, d)))
        self.n_out = 3 if config.loss_mode == "cross_entropy" else 1
        if config.head_hidden > 0:
            add_linear_params(params, rng, "match/head_hidden", d, config.head_hidden)
            add_linear_params(params, rng, "match/head_out", config.head_hidden, self.n_out)
        else:
            add_linear_params(params, rng, "match/head_out", d, self.n_out)

    def cold_start_row(self) -> Tensor:
        return self.params["match/cold_start"]

    def head(self, diff: Tensor) -> Tensor:
        P = self.params
        if self.config.head_hidden > 0:
            diff = ag.elu(linear(diff, P["match/head_hidden_w"], P["match/head_hidden_b"]))
        return linear(diff, P["match/head_out_w"], P["match/head_out_b"])

    def compare(self, tokens: Tensor, player_ids, sides, collect_attn=None):
        """Run the comparison transformer over per-player tokens.

        Tokens are re-ordered internally to the canonical (side, player id)
        order and the outputs are returned in the caller's order together
        with the canonical team means r (home) and b (away).
        """
        player_ids = np.asarray(player_ids, dtype=np.int64)
        sides = np.asarray(sides, dtype=np.int64)
        if tokens.shape[0] != len(player_ids) or len(player_ids) != len(sides):
            raise ConfigurationError("token/roster length mismatch")
        if not (sides == 0).any() or not (sides == 1).any():
            raise PredictionError("both teams need at least one player")
        perm = np.lexsort((player_ids, sides))
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        z = self.encoder.forward(ag.gather_rows(tokens, perm), collect_attn)
        home_rows = np.nonzero(sides[perm] == 0)[0]
        away_rows = np.nonzero(sides[perm] == 1)[0]
        r = ag.mean0(ag.slice_rows(z, int(home_rows[0]), int(home_rows[-1]) + 1))
        b = ag.mean0(ag.slice_rows(z, int(away_rows[0]), int(away_rows[-1]) + 1))
        return ag.gather_rows(z, inverse), r, b

    def predict_scores(self, tokens: Tensor, player_ids, sides, collect_attn=None) -> dict:
        """Full head pass; 'y_hat' is a (1,1) tensor under mse mode, and the
        expected ordinal target win + 0.5*draw under cross-entropy mode."""
        z, r, b = self.compare(tokens, player_ids, sides, collect_attn)
        diff = ag.reshape(ag.sub(r, b), (1, self.config.output_dim))
        logits = self.head(diff)
        out = {"z": z, "r": r, "b": b, "logits": logits}
        if self.n_out == 1:
            out["y_hat"] = ag.sigmoid(logits)
        else:
            probs = ag.softmax(logits, axis=1)
            out["probs"] = probs
            weights = Tensor(np.array([[1.0], [0.5], [0.0]]))  # win, draw, lose
            out["y_hat"] = ag.matmul(probs, weights)
        return out
