"""End-to-end orchestration: each step reads the pipeline config, consumes
the previous step's artifacts from the run directory and writes its own.

Run-directory layout:

    graphs/                 per-match graph cache (build-graphs)
    checkpoints/stage1.npz  expert encoders + tables (pretrain)
    checkpoints/final.npz   full parameter set (train)
    embeddings.npz          offline (player, match) expert store (precompute)
    metrics_*.json          loss trajectories
    evaluation.{json,txt}   per-class accuracy report
    attention.{json,txt}    role-grouped attention report
    substitution.{json,txt} counterfactual report
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .analysis import (
    AccuracyReport,
    attention_role_matrix,
    per_class_accuracy,
    substitution_analysis,
)
from .autograd import Tensor
from .config import PipelineConfig
from .data import MatchDataset, build_match_dataset, label_histogram, parse_event_stream, parse_match_metadata
from .graphs import GraphCache, TeamGraph, build_graph_for_match, build_team_graph
from .match_net import classify
from .model import HigformerModel, RosterEntry, roster_entries_for_match
from .training import (
    EmbeddingStore,
    load_checkpoint,
    precompute_embeddings,
    save_checkpoint,
    stage1_pretrain,
    stage2_train,
    state_hash,
)

logger = logging.getLogger(__name__)

RUN_DIR_ENV = "HIGFORMER_RUN_DIR"


def effective_config(config: PipelineConfig) -> PipelineConfig:
    """Apply the run-directory environment override."""
    run_dir = os.environ.get(RUN_DIR_ENV)
    if run_dir:
        payload = json.loads(config.to_json())
        for key in ("graph_cache_dir", "checkpoint_dir", "store_path"):
            if payload[key].startswith(payload["run_dir"]):
                payload[key] = payload[key].replace(payload["run_dir"], run_dir, 1)
        payload["run_dir"] = run_dir
        config = PipelineConfig(**payload)
    return config


def run_dir(config: PipelineConfig) -> Path:
    path = Path(config.run_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_dataset(config: PipelineConfig) -> MatchDataset:
    events = parse_event_stream(Path(config.events_path).read_bytes())
    metas = parse_match_metadata(Path(config.matches_path).read_bytes())
    return build_match_dataset(events, metas)


def ingest(config: PipelineConfig) -> dict:
    """Parse + validate the data files and write a dataset summary."""
    dataset = load_dataset(config)
    summary = {
        "n_matches": len(dataset.matches),
        "n_train": len(dataset.train),
        "n_test": len(dataset.test),
        "n_teams": len(dataset.team_ids()),
        "n_players": len({l.player_id for ls in dataset.lines.values() for l in ls}),
        "n_events": sum(len(evs) for evs in dataset.events_by_match.values()),
        "divisions": dataset.divisions(),
        "train_label_histogram": label_histogram(dataset.train),
        "test_label_histogram": label_histogram(dataset.test),
    }
    out = run_dir(config) / "dataset_summary.json"
    out.write_text(json.dumps(summary, indent=2, sort_keys=True))
    logger.info("ingested %d matches / %d events", summary["n_matches"], summary["n_events"])
    return summary


def build_graphs(config: PipelineConfig, dataset: MatchDataset | None = None) -> GraphCache:
    dataset = dataset or load_dataset(config)
    cache = GraphCache(config.graph_cache_dir)
    for match_id in sorted(dataset.matches):
        cache.save(build_graph_for_match(dataset, match_id, d_id=config.train.id_dim))
    logger.info("cached %d graphs under %s", len(dataset.matches), config.graph_cache_dir)
    return cache


def _stage1_path(config) -> Path:
    return Path(config.checkpoint_dir) / "stage1.npz"


def _final_path(config) -> Path:
    return Path(config.checkpoint_dir) / "final.npz"


def _base_meta(config: PipelineConfig, dataset: MatchDataset) -> dict:
    return {
        "train_config": asdict(config.train),
        "team_ids": dataset.team_ids(),
    }


def pretrain(config: PipelineConfig, dataset=None, cache=None) -> dict:
    dataset = dataset or load_dataset(config)
    cache = cache or GraphCache(config.graph_cache_dir)
    model = HigformerModel(config.train, dataset.team_ids())
    results = stage1_pretrain(model, dataset, cache, config.train)
    meta = _base_meta(config, dataset)
    meta["trained_stages"] = ["stage1"]
    state = model.state(groups=("type_tables", "global_encoder", "local_encoder"))
    save_checkpoint(_stage1_path(config), state, meta)
    metrics = {name: res.losses for name, res in results.items()}
    (run_dir(config) / "metrics_stage1.json").write_text(json.dumps(metrics))
    return {"results": results, "checkpoint": str(_stage1_path(config))}


def _model_from_checkpoint(path, config: PipelineConfig, dataset: MatchDataset):
    state, meta = load_checkpoint(path)
    model = HigformerModel(config.train, meta.get("team_ids", dataset.team_ids()))
    model.load_state(state)
    return model, meta


def precompute(config: PipelineConfig, dataset=None, cache=None) -> EmbeddingStore:
    dataset = dataset or load_dataset(config)
    cache = cache or GraphCache(config.graph_cache_dir)
    state, meta = load_checkpoint(_stage1_path(config))
    model = HigformerModel(config.train, meta.get("team_ids", dataset.team_ids()))
    model.load_state(state)
    store = precompute_embeddings(model, dataset, cache, checkpoint_hash=state_hash(state))
    store.save(config.store_path)
    logger.info("embedding store: %d entries -> %s", len(store), config.store_path)
    return store


def train(config: PipelineConfig, dataset=None) -> dict:
    dataset = dataset or load_dataset(config)
    model, meta = _model_from_checkpoint(_stage1_path(config), config, dataset)
    store = EmbeddingStore.load(config.store_path)
    team_graph = build_team_graph(dataset.train, dataset.team_ids())
    result = stage2_train(model, dataset, store, team_graph, config.train)
    meta = _base_meta(config, dataset)
    meta["trained_stages"] = ["stage1", "stage2"]
    meta["max_frozen_grad"] = result.extra.get("max_frozen_grad", 0.0)
    save_checkpoint(_final_path(config), model.state(), meta)
    (run_dir(config) / "metrics_stage2.json").write_text(json.dumps(result.losses))
    return {"result": result, "checkpoint": str(_final_path(config))}


@dataclass
class Artifacts:
    config: PipelineConfig
    dataset: MatchDataset
    model: HigformerModel
    store: EmbeddingStore
    team_graph: TeamGraph
    z_team: Tensor
    meta: dict
    warnings: list

    def team_rows(self, home_id, away_id):
        return (self.model.team.index[home_id], self.model.team.index[away_id])


def load_artifacts(config: PipelineConfig, dataset=None) -> Artifacts:
    """Load the best available checkpoint plus store for inference commands."""
    dataset = dataset or load_dataset(config)
    warnings = []
    if _final_path(config).exists():
        model, meta = _model_from_checkpoint(_final_path(config), config, dataset)
    elif _stage1_path(config).exists():
        model, meta = _model_from_checkpoint(_stage1_path(config), config, dataset)
        warnings.append("UNTRAINED: stage-2 components have never been trained")
    else:
        model = HigformerModel(config.train, dataset.team_ids())
        meta = {"trained_stages": []}
        warnings.append("UNTRAINED: no checkpoint found; using freshly initialised parameters")
    if "stage2" not in meta.get("trained_stages", []):
        if not warnings:
            warnings.append("UNTRAINED: checkpoint lacks stage-2 training")
    store_path = Path(config.store_path)
    if store_path.exists():
        store = EmbeddingStore.load(store_path)
    else:
        warnings.append("no embedding store found; predictions use cold-start pooling only")
        store = EmbeddingStore([], [], np.zeros((0, config.train.output_dim)),
                               np.zeros((0, config.train.output_dim)),
                               np.zeros((0, 10)), {"version": 1, "n_entries": 0})
    team_graph = build_team_graph(dataset.train, dataset.team_ids())
    z_team = Tensor(model.encode_teams(team_graph).data)
    for w in warnings:
        logger.warning("%s", w)
    return Artifacts(config=config, dataset=dataset, model=model, store=store,
                     team_graph=team_graph, z_team=z_team, meta=meta, warnings=warnings)


def predictions_for(artifacts: Artifacts, matches) -> list:
    preds = []
    cfg = artifacts.model.config
    for match in matches:
        entries = roster_entries_for_match(
            artifacts.dataset, match, cfg.history_length,
            cross_division=cfg.cross_division_history,
        )
        team_rows = artifacts.team_rows(match.home_team_id, match.away_team_id) \
            if cfg.use_team_net else None
        z_team = artifacts.z_team if cfg.use_team_net else None
        preds.append(artifacts.model.predict_match(match, entries, artifacts.store,
                                                   z_team, team_rows))
    return preds


def evaluate(config: PipelineConfig, dataset=None, artifacts=None) -> dict:
    artifacts = artifacts or load_artifacts(config, dataset)
    matches = artifacts.dataset.test
    preds = predictions_for(artifacts, matches)
    report = per_class_accuracy(
        [p.outcome_class for p in preds],
        [m.label for m in matches],
        [m.division for m in matches],
    )
    payload = {
        "warnings": artifacts.warnings,
        "report": report.to_dict(),
        "predictions": [p.record() for p in preds],
    }
    base = run_dir(config)
    (base / "evaluation.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    text = report.table()
    if artifacts.warnings:
        text = "\n".join(f"!!! {w}" for w in artifacts.warnings) + "\n\n" + text
    (base / "evaluation.txt").write_text(text + "\n")
    return payload


def attention_report(config: PipelineConfig, dataset=None, artifacts=None) -> dict:
    artifacts = artifacts or load_artifacts(config, dataset)
    cache = GraphCache(config.graph_cache_dir)
    graphs = [cache.load(m.match_id) for m in artifacts.dataset.test]
    trained = "stage1" in artifacts.meta.get("trained_stages", [])
    matrix = attention_role_matrix(artifacts.model, graphs, trained=trained)
    payload = {"warnings": artifacts.warnings, "attention": matrix.to_dict()}
    base = run_dir(config)
    (base / "attention.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    (base / "attention.txt").write_text(matrix.table() + "\n")
    return payload


def substitute(config: PipelineConfig, team_id: int, substitutions, opponent=None,
               dataset=None, artifacts=None) -> dict:
    artifacts = artifacts or load_artifacts(config, dataset)
    report = substitution_analysis(
        artifacts.model, artifacts.dataset, artifacts.store, artifacts.z_team,
        team_id, substitutions, opponent=opponent,
    )
    payload = {"warnings": artifacts.warnings, "report": report.to_dict()}
    base = run_dir(config)
    (base / "substitution.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    (base / "substitution.txt").write_text(report.table() + "\n")
    return payload


def hypothetical_prediction(artifacts: Artifacts, home_team: int, away_team: int,
                            home_roster, away_roster):
    """Predict a fixture that is not in the dataset, using each player's
    latest available history."""
    cfg = artifacts.model.config
    dataset = artifacts.dataset
    entries = []
    for side, roster in ((0, home_roster), (1, away_roster)):
        for pid in roster:
            history = dataset.latest_match_ids(pid, cfg.history_length)
            entries.append(RosterEntry(player_id=pid, side=side, history=history))
    team_rows = artifacts.team_rows(home_team, away_team)
    return artifacts.model.predict_match(None, entries, artifacts.store,
                                         artifacts.z_team, team_rows)
