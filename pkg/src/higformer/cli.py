"""Command-line entry point orchestrating the full pipeline.

Typical flow:

    higformer synth --teams 10 --seed 7 --out data/league --write-config run.json
    higformer ingest --config run.json
    higformer build-graphs --config run.json
    higformer pretrain --config run.json
    higformer precompute --config run.json
    higformer train --config run.json
    higformer evaluate --config run.json
    higformer serve --config run.json
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigurationError, PipelineConfig
from .synth import LeagueConfig, synthesize_league

logger = logging.getLogger("higformer")


def _load_config(args) -> PipelineConfig:
    if args.config:
        config = PipelineConfig.from_json(Path(args.config).read_text())
    else:
        config = PipelineConfig()
    config = pipeline.effective_config(config)
    if getattr(args, "seed", None) is not None:
        config.train.seed = args.seed
    return config


def _setup_logging(config: PipelineConfig | None = None):
    handlers = [logging.StreamHandler(sys.stderr)]
    if config is not None:
        log_path = pipeline.run_dir(config) / "run.log"
        handlers.append(logging.FileHandler(log_path))
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        handlers=handlers,
        force=True,
    )


def _require_paths(config: PipelineConfig, *paths):
    for p in paths:
        if not Path(p).exists():
            raise ConfigurationError(f"required path {p} does not exist")


def cmd_synth(args) -> int:
    league_config = LeagueConfig(
        n_teams=args.teams,
        n_players_per_team=args.players,
        n_rounds=args.rounds,
        strength_spread=args.spread,
        seed=args.seed if args.seed is not None else 0,
    )
    league = synthesize_league(league_config)
    out = league.write(args.out)
    print(f"wrote {len(league.metadata)} matches / {len(league.events)} events to {out}")
    print(f"bayes-optimal accuracy: {league.manifest['bayes_optimal_accuracy']:.4f} "
          f"(test split: {league.manifest['bayes_optimal_accuracy_test']:.4f})")
    if args.write_config:
        config = PipelineConfig(
            events_path=str(out / "events.ndjson"),
            matches_path=str(out / "matches.ndjson"),
            run_dir=args.run_dir or "runs/synth",
        )
        Path(args.write_config).write_text(config.to_json())
        print(f"pipeline config written to {args.write_config}")
    return 0


def cmd_ingest(args) -> int:
    config = _load_config(args)
    _setup_logging(config)
    _require_paths(config, config.events_path, config.matches_path)
    summary = pipeline.ingest(config)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_build_graphs(args) -> int:
    config = _load_config(args)
    _setup_logging(config)
    _require_paths(config, config.events_path, config.matches_path)
    cache = pipeline.build_graphs(config)
    print(f"graph cache ready: {len(cache.match_ids())} matches in {config.graph_cache_dir}")
    return 0


def cmd_pretrain(args) -> int:
    config = _load_config(args)
    _setup_logging(config)
    _require_paths(config, config.events_path, config.matches_path, config.graph_cache_dir)
    out = pipeline.pretrain(config)
    for name, res in out["results"].items():
        print(f"stage1/{name}: {res.steps} steps, final loss {res.losses[-1]:.5f}")
    print(f"checkpoint: {out['checkpoint']}")
    return 0


def cmd_precompute(args) -> int:
    config = _load_config(args)
    _setup_logging(config)
    store = pipeline.precompute(config)
    print(f"embedding store: {len(store)} entries -> {config.store_path}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    _setup_logging(config)
    out = pipeline.train(config)
    res = out["result"]
    print(f"stage2: {res.steps} steps, final loss {res.losses[-1]:.5f}, "
          f"max frozen grad {res.extra['max_frozen_grad']:.3g}")
    print(f"checkpoint: {out['checkpoint']}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    _setup_logging(config)
    payload = pipeline.evaluate(config)
    for warning in payload["warnings"]:
        print(f"!!! {warning}")
    print(Path(pipeline.run_dir(config) / "evaluation.txt").read_text())
    return 0


def cmd_attention_report(args) -> int:
    config = _load_config(args)
    _setup_logging(config)
    pipeline.attention_report(config)
    print(Path(pipeline.run_dir(config) / "attention.txt").read_text())
    return 0


def cmd_substitute(args) -> int:
    config = _load_config(args)
    _setup_logging(config)
    outs = args.out_player or []
    ins = args.in_player or []
    if len(outs) != len(ins):
        raise ConfigurationError("--out and --in must be given the same number of times")
    pipeline.substitute(config, args.team, list(zip(outs, ins)), opponent=args.opponent)
    print(Path(pipeline.run_dir(config) / "substitution.txt").read_text())
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _load_config(args)
    _setup_logging(config)
    artifacts = pipeline.load_artifacts(config)
    app = create_app(artifacts, frontend_dir=args.frontend)
    host = args.host or config.host
    port = args.port or config.port
    logger.info("serving on %s:%d", host, port)
    uvicorn.run(app, host=host, port=port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="higformer", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="pipeline config JSON path")
        p.add_argument("--seed", type=int, help="override the training seed")

    p = sub.add_parser("synth", help="generate a synthetic league dataset")
    p.add_argument("--teams", type=int, default=10)
    p.add_argument("--players", type=int, default=14)
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--spread", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data/synthetic")
    p.add_argument("--write-config", help="also write a pipeline config pointing at the data")
    p.add_argument("--run-dir", help="run directory recorded in the written config")
    p.set_defaults(func=cmd_synth)

    for name, func in (
        ("ingest", cmd_ingest),
        ("build-graphs", cmd_build_graphs),
        ("pretrain", cmd_pretrain),
        ("precompute", cmd_precompute),
        ("train", cmd_train),
        ("evaluate", cmd_evaluate),
        ("attention-report", cmd_attention_report),
    ):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("substitute", help="player-substitution counterfactuals")
    common(p)
    p.add_argument("--team", type=int, required=True)
    p.add_argument("--out", dest="out_player", type=int, action="append")
    p.add_argument("--in", dest="in_player", type=int, action="append")
    p.add_argument("--opponent", type=int)
    p.set_defaults(func=cmd_substitute)

    p = sub.add_parser("serve", help="run the prediction/what-if HTTP service")
    common(p)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--frontend", help="static frontend assets directory")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pipeline failures exit 1 with a message
        logger.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
