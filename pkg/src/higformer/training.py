"""Two-stage trainer: per-match expert pretraining, offline embedding
precomputation, and the fusion/team/match stage over frozen encoders."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import TrainConfig
from .data import DataError, MatchDataset
from .layers import NumericError, add_linear_params, linear
from .match_net import CE_CLASSES, outcome_to_target
from .model import (
    STAGE1_GROUPS,
    STAGE2_GROUPS,
    HigformerModel,
    roster_entries_for_match,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
STORE_VERSION = 1


class TrainingError(RuntimeError):
    """Raised on divergence; carries the last finite-loss parameter state."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


def mse_loss(y: float, y_hat: float) -> float:
    """Squared residual between ordinal target and prediction."""
    return (y - y_hat) ** 2


def sampler_weights(labels) -> np.ndarray:
    """Per-example sampling probabilities proportional to 1/class frequency."""
    labels = list(labels)
    if not labels:
        raise DataError("cannot build a sampler over zero examples")
    freq = {}
    for lab in labels:
        freq[lab] = freq.get(lab, 0) + 1
    w = np.array([1.0 / freq[lab] for lab in labels])
    return w / w.sum()


class WeightedSampler:
    """Seeded with-replacement index stream; uniform when disabled."""

    def __init__(self, labels, seed: int, weighted: bool = True):
        self.n = len(labels)
        self.probs = sampler_weights(labels) if weighted else None
        self.rng = np.random.default_rng(seed)

    def draw(self, batch_size: int) -> np.ndarray:
        return self.rng.choice(self.n, size=batch_size, replace=True, p=self.probs)


class Adam:
    def __init__(self, named_params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 grad_clip: float = 0.0):
        self.named = list(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.named}
        self.v = {k: np.zeros_like(t.data) for k, t in self.named}

    def zero_grad(self):
        for _, t in self.named:
            t.grad = None

    def step(self):
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for k, t in self.named}
        if self.grad_clip > 0:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > self.grad_clip:
                scale = self.grad_clip / total
                for g in grads.values():
                    g *= scale
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, t in self.named:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            t.data -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, state: dict, meta: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {f"param:{k}": v for k, v in state.items()}
    meta = dict(meta, version=CHECKPOINT_VERSION)
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez_compressed(path, **payload)


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"].tobytes()).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {meta.get('version')}")
        state = {k[len("param:"):]: z[k] for k in z.files if k.startswith("param:")}
    return state, meta


def state_hash(state: dict) -> str:
    digest = hashlib.sha256()
    for k in sorted(state):
        digest.update(k.encode())
        digest.update(np.ascontiguousarray(state[k]).tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# offline embedding store
# ---------------------------------------------------------------------------


class EmbeddingStore:
    """(player, match) -> (global embedding, local embedding, raw counts)."""

    def __init__(self, pids, mids, z_global, z_local, counts, manifest):
        self.pids = np.asarray(pids, dtype=np.int64)
        self.mids = np.asarray(mids, dtype=np.int64)
        self.z_global = np.asarray(z_global)
        self.z_local = np.asarray(z_local)
        self.counts = np.asarray(counts)
        self.manifest = manifest
        self._index = {(int(p), int(m)): i for i, (p, m) in enumerate(zip(self.pids, self.mids))}

    def __len__(self):
        return len(self.pids)

    def has(self, player_id: int, match_id: int) -> bool:
        return (player_id, match_id) in self._index

    def get(self, player_id: int, match_id: int):
        i = self._index.get((player_id, match_id))
        if i is None:
            raise DataError(f"no stored embedding for player {player_id} in match {match_id}")
        return self.z_global[i], self.z_local[i], self.counts[i]

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            path,
            pids=self.pids,
            mids=self.mids,
            z_global=self.z_global,
            z_local=self.z_local,
            counts=self.counts,
            __manifest__=np.frombuffer(
                json.dumps(self.manifest, sort_keys=True).encode(), dtype=np.uint8
            ),
        )

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise DataError(f"embedding store {path} does not exist")
        with np.load(path, allow_pickle=False) as z:
            manifest = json.loads(bytes(z["__manifest__"].tobytes()).decode())
            if manifest.get("version") != STORE_VERSION:
                raise DataError(f"unsupported store version {manifest.get('version')}")
            return cls(z["pids"], z["mids"], z["z_global"], z["z_local"], z["counts"], manifest)


def precompute_embeddings(model: HigformerModel, dataset: MatchDataset, graphs,
                          checkpoint_hash: str = "") -> EmbeddingStore:
    """Forward every match graph once and store per-player expert embeddings.

    Both experts are stored separately so the still-trainable gate can
    re-weight them later; disabled experts store zero vectors.
    """
    cfg = model.config
    pids, mids, zg, zl, counts = [], [], [], [], []
    for match in dataset.all_matches():
        graph = graphs.load(match.match_id) if hasattr(graphs, "load") else graphs[match.match_id]
        n = graph.n_nodes
        zero = np.zeros((n, cfg.output_dim))
        z_global = model.player.encode_global(graph).data if cfg.use_global else zero
        z_local = model.player.encode_local(graph).data if cfg.use_local else zero
        for i in range(n):
            pids.append(int(graph.player_ids[i]))
            mids.append(match.match_id)
            zg.append(z_global[i])
            zl.append(z_local[i])
            counts.append(graph.node_feat[i])
    manifest = {
        "version": STORE_VERSION,
        "dim": cfg.output_dim,
        "n_entries": len(pids),
        "source_checkpoint": checkpoint_hash,
    }
    return EmbeddingStore(pids, mids, np.asarray(zg), np.asarray(zl), np.asarray(counts), manifest)


# ---------------------------------------------------------------------------
# stage 1: per-match expert pretraining
# ---------------------------------------------------------------------------


@dataclass
class StageResult:
    losses: list = field(default_factory=list)
    steps: int = 0
    extra: dict = field(default_factory=dict)


def _target_loss(model, scalar_or_logits, label: str):
    """Outcome loss on a (1,1) sigmoid output or (1,3) logits row."""
    if model.config.loss_mode == "cross_entropy":
        logits = ag.reshape(scalar_or_logits, (3,))
        return ag.cross_entropy(logits, CE_CLASSES.index(label))
    target = outcome_to_target(label)
    diff = ag.sub(scalar_or_logits, Tensor(np.array([[target]])))
    return ag.reshape(ag.mul(diff, diff), ())


def _check_finite_loss(value: float, what: str, snapshot):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss in {what}", last_good=snapshot)


def _head_width(config: TrainConfig) -> int:
    return 3 if config.loss_mode == "cross_entropy" else 1


def stage1_pretrain(model: HigformerModel, dataset: MatchDataset, graphs,
                    config: TrainConfig, progress=None) -> dict:
    """Pre-train the global and local experts separately on per-match graphs.

    The global path reads out a class token, the local path mean-pools node
    embeddings; both feed a discardable linear head into the outcome loss.
    Returns {'global': StageResult, 'local': StageResult}.
    """
    rng = np.random.default_rng(config.seed)
    head_rng = np.random.default_rng(config.seed + 1)
    if "stage1/global_head_w" not in model.params:
        add_linear_params(model.params, head_rng, "stage1/global_head",
                          config.output_dim, _head_width(config))
        add_linear_params(model.params, head_rng, "stage1/local_head",
                          config.output_dim, _head_width(config))

    train = dataset.train
    labels = [m.label for m in train]
    results = {}

    paths = []
    if config.use_global:
        paths.append(("global", ("player/global/", "player/tables/", "stage1/global_head")))
    if config.use_local:
        paths.append(("local", ("player/local/", "stage1/local_head")))

    graph_of = {}
    for m in train:
        graph_of[m.match_id] = graphs.load(m.match_id) if hasattr(graphs, "load") else graphs[m.match_id]

    for path_name, prefixes in paths:
        sampler = WeightedSampler(labels, seed=config.seed + 17,
                                  weighted=config.weighted_sampler_stage1)
        optim = Adam(model.params.select(prefixes), lr=config.learning_rate,
                     grad_clip=config.grad_clip)
        result = StageResult()
        last_good = model.params.state(prefixes)
        for step in range(config.stage1_steps):
            idx = sampler.draw(config.batch_size)
            optim.zero_grad()
            total = None
            try:
                for i in idx:
                    match = train[i]
                    graph = graph_of[match.match_id]
                    if path_name == "global":
                        rep = model.player.encode_global(graph, mode="class_token")
                        out = linear(rep, model.params["stage1/global_head_w"],
                                     model.params["stage1/global_head_b"])
                    else:
                        z = model.player.encode_local(graph)
                        out = ag.reshape(ag.mean0(z), (1, config.output_dim))
                        out = linear(out, model.params["stage1/local_head_w"],
                                     model.params["stage1/local_head_b"])
                    if config.loss_mode != "cross_entropy":
                        out = ag.sigmoid(out)
                    loss = _target_loss(model, out, match.label)
                    total = loss if total is None else ag.add(total, loss)
            except NumericError as exc:
                raise TrainingError(
                    f"stage1/{path_name} diverged at step {step}: {exc}", last_good=last_good
                ) from exc
            batch_loss = ag.scale(total, 1.0 / len(idx))
            _check_finite_loss(float(batch_loss.data), f"stage1/{path_name} step {step}", last_good)
            batch_loss.backward()
            optim.step()
            result.losses.append(float(batch_loss.data))
            result.steps += 1
            last_good = model.params.state(prefixes)
            if progress:
                progress(f"stage1/{path_name}", step, float(batch_loss.data))
        results[path_name] = result
        logger.info("stage1 %s: %d steps, final loss %.5f", path_name, result.steps,
                    result.losses[-1] if result.losses else float("nan"))
    return results


# ---------------------------------------------------------------------------
# stage 2: gate + team + match training over the frozen store
# ---------------------------------------------------------------------------


def stage2_train(model: HigformerModel, dataset: MatchDataset, store: EmbeddingStore,
                 team_graph, config: TrainConfig, progress=None) -> StageResult:
    """Train gate, team embeddings/encoder and match transformer; player
    encoders stay frozen (their gradients are asserted zero per step)."""
    train = dataset.train
    labels = [m.label for m in train]
    sampler = WeightedSampler(labels, seed=config.seed + 31,
                              weighted=config.weighted_sampler_stage2)
    trainable = model.group_prefixes(STAGE2_GROUPS)
    frozen = model.group_prefixes(STAGE1_GROUPS)
    optim = Adam(model.params.select(trainable), lr=config.learning_rate,
                 grad_clip=config.grad_clip)

    entries_cache = {
        m.match_id: roster_entries_for_match(dataset, m, config.history_length,
                                             cross_division=config.cross_division_history)
        for m in train
    }

    result = StageResult()
    max_frozen_grad = 0.0
    last_good = model.params.state(trainable)
    for step in range(config.stage2_steps):
        idx = sampler.draw(config.batch_size)
        optim.zero_grad()
        model.params.zero_grad(frozen)
        z_team = model.encode_teams(team_graph) if config.use_team_net else None
        total = None
        for i in idx:
            match = train[i]
            team_rows = (
                model.team.index[match.home_team_id],
                model.team.index[match.away_team_id],
            ) if config.use_team_net else None
            out = model.forward_match(entries_cache[match.match_id], store, z_team, team_rows)
            value = out["logits"] if config.loss_mode == "cross_entropy" else out["y_hat"]
            loss = _target_loss(model, value, match.label)
            total = loss if total is None else ag.add(total, loss)
        batch_loss = ag.scale(total, 1.0 / len(idx))
        _check_finite_loss(float(batch_loss.data), f"stage2 step {step}", last_good)
        batch_loss.backward()
        for _, t in model.params.select(frozen):
            if t.grad is not None:
                max_frozen_grad = max(max_frozen_grad, float(np.abs(t.grad).max()))
        optim.step()
        result.losses.append(float(batch_loss.data))
        result.steps += 1
        last_good = model.params.state(trainable)
        if progress:
            progress("stage2", step, float(batch_loss.data))
    result.extra["max_frozen_grad"] = max_frozen_grad
    logger.info("stage2: %d steps, final loss %.5f, max frozen grad %.3g",
                result.steps, result.losses[-1] if result.losses else float("nan"),
                max_frozen_grad)
    return result
