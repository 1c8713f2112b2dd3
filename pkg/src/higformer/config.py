"""Run configuration dataclasses with lossless JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields


class ConfigurationError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    stage1_steps: int = 2328
    stage2_steps: int = 2134
    history_length: int = 10
    batch_size: int = 32
    seed: int = 0
    hidden_dim: int = 64
    output_dim: int = 16
    id_dim: int = 8
    n_layers: int = 3
    n_heads: int = 4
    ffn_mult: int = 2
    match_layers: int = 1
    head_hidden: int = 0  # 0 = single linear output layer
    use_global: bool = True
    use_local: bool = True
    use_player_net: bool = True
    use_team_net: bool = True
    loss_mode: str = "mse_targets"  # or "cross_entropy"
    thresholds: tuple = (4.0 / 7.0, 5.0 / 7.0)
    weighted_sampler_stage1: bool = True
    weighted_sampler_stage2: bool = True
    grad_clip: float = 5.0
    feature_transform: str = "log1p"  # or "none"
    cross_division_history: bool = True
    team_rate_bias: bool = True

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        self.validate()

    def validate(self):
        positive = (
            "learning_rate", "stage1_steps", "stage2_steps", "history_length",
            "batch_size", "hidden_dim", "output_dim", "id_dim", "n_layers",
            "n_heads", "ffn_mult", "match_layers",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.hidden_dim % self.n_heads:
            raise ConfigurationError("hidden_dim must be divisible by n_heads")
        if self.loss_mode not in ("mse_targets", "cross_entropy"):
            raise ConfigurationError(f"unknown loss_mode {self.loss_mode!r}")
        if self.feature_transform not in ("log1p", "none"):
            raise ConfigurationError(f"unknown feature_transform {self.feature_transform!r}")
        if len(self.thresholds) != 2 or not 0 < self.thresholds[0] < self.thresholds[1] < 1:
            raise ConfigurationError("thresholds must be 0 < low < high < 1")
        if self.use_player_net and not (self.use_global or self.use_local):
            raise ConfigurationError("at least one expert must stay enabled while the player network is on")


@dataclass
class PipelineConfig:
    events_path: str = "data/events.ndjson"
    matches_path: str = "data/matches.ndjson"
    run_dir: str = "runs/default"
    graph_cache_dir: str = ""  # default: <run_dir>/graphs
    checkpoint_dir: str = ""  # default: <run_dir>/checkpoints
    store_path: str = ""  # default: <run_dir>/embeddings.npz
    host: str = "127.0.0.1"
    port: int = 8000
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if not self.graph_cache_dir:
            self.graph_cache_dir = f"{self.run_dir}/graphs"
        if not self.checkpoint_dir:
            self.checkpoint_dir = f"{self.run_dir}/checkpoints"
        if not self.store_path:
            self.store_path = f"{self.run_dir}/embeddings.npz"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        payload = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**payload)
