"""Shared fixtures: a small synthetic league run end-to-end through the CLI
pipeline into a temporary run directory."""

import json
from dataclasses import asdict

import pytest

from higformer.config import PipelineConfig, TrainConfig
from higformer.synth import LeagueConfig, synthesize_league


SMALL_TRAIN = dict(
    hidden_dim=8, output_dim=4, id_dim=2, n_layers=2, n_heads=2,
    stage1_steps=3, stage2_steps=3, batch_size=4, history_length=4, seed=77,
)


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    """League data + pipeline config on disk, pipeline fully run via the CLI."""
    from higformer.cli import main

    root = tmp_path_factory.mktemp("cli_run")
    league = synthesize_league(
        LeagueConfig(n_teams=4, n_players_per_team=5, n_rounds=3, seed=42)
    )
    data_dir = league.write(root / "data")
    config = PipelineConfig(
        events_path=str(data_dir / "events.ndjson"),
        matches_path=str(data_dir / "matches.ndjson"),
        run_dir=str(root / "run"),
        train=TrainConfig(**SMALL_TRAIN),
    )
    config_path = root / "config.json"
    config_path.write_text(config.to_json())

    for command in ("ingest", "build-graphs", "pretrain", "precompute", "train"):
        assert main([command, "--config", str(config_path)]) == 0, command

    return {"root": root, "config_path": config_path, "config": config, "league": league}
