"""HTTP service exposing prediction and what-if endpoints over a loaded
model snapshot. All endpoints are stateless reads; the snapshot is loaded
once at startup and never mutated."""

from __future__ import annotations

import logging
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .analysis import SubstitutionError, substitution_analysis
from .data import DataError, OUTCOMES, flip_outcome
from .pipeline import Artifacts, hypothetical_prediction, predictions_for

logger = logging.getLogger(__name__)

API_VERSION = 1


class PredictRequest(BaseModel):
    home_team: int
    away_team: int
    rosters: dict = Field(..., description="{'home': [player ids], 'away': [player ids]}")


class SubstitutionItem(BaseModel):
    out_player: int
    in_player: int


class WhatIfRequest(BaseModel):
    team_id: int
    substitutions: list[SubstitutionItem] = Field(default_factory=list)
    opponent: Optional[int] = None


def _known_players(artifacts: Artifacts) -> set:
    known = set()
    for lines in artifacts.dataset.lines.values():
        for line in lines:
            known.add(line.player_id)
    return known


def _team_baselines(artifacts: Artifacts) -> dict:
    """Per-team predicted outcome distribution over its test fixtures."""
    dataset = artifacts.dataset
    by_team = {}
    preds = {p.match_id: p for p in predictions_for(artifacts, dataset.test)}
    for team in dataset.team_ids():
        fixtures = [m for m in dataset.test if team in (m.home_team_id, m.away_team_id)]
        if not fixtures:
            by_team[team] = None
            continue
        tally = {c: 0 for c in OUTCOMES}
        for m in fixtures:
            label = preds[m.match_id].outcome_class
            if m.away_team_id == team:
                label = flip_outcome(label)
            tally[label] += 1
        by_team[team] = {c: 100.0 * tally[c] / len(fixtures) for c in OUTCOMES}
    return by_team


def create_app(artifacts: Artifacts, frontend_dir=None) -> FastAPI:
    app = FastAPI(title="higformer what-if service")
    dataset = artifacts.dataset
    cfg = artifacts.model.config
    known_players = _known_players(artifacts)
    rosters = {}
    for team in dataset.team_ids():
        members = {}
        for lines in dataset.lines.values():
            for line in lines:
                if line.team_id == team:
                    members[line.player_id] = line.role
        rosters[team] = members
    baselines = _team_baselines(artifacts)

    @app.exception_handler(RequestValidationError)
    async def schema_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"v": API_VERSION, "error": str(exc)})

    @app.exception_handler(Exception)
    async def internal_handler(request: Request, exc: Exception):
        fault = uuid.uuid4().hex
        logger.exception("internal fault %s", fault)
        return JSONResponse(status_code=500,
                            content={"v": API_VERSION, "error": f"internal fault {fault}"})

    @app.get("/api/health")
    def health():
        from . import kernels

        return {
            "v": API_VERSION,
            "status": "ok",
            "kernel_backend": kernels.backend_name(),
            "trained_stages": artifacts.meta.get("trained_stages", []),
            "warnings": artifacts.warnings,
        }

    @app.get("/api/teams")
    def teams():
        return {
            "v": API_VERSION,
            "teams": [
                {
                    "team_id": team,
                    "roster": sorted(rosters[team]),
                    "n_test_fixtures": sum(
                        1 for m in dataset.test if team in (m.home_team_id, m.away_team_id)
                    ),
                    "baseline": baselines[team],
                }
                for team in dataset.team_ids()
            ],
        }

    @app.get("/api/players")
    def players(team: int):
        if team not in rosters:
            raise HTTPException(status_code=404, detail=f"unknown team {team}")
        return {
            "v": API_VERSION,
            "team_id": team,
            "players": [
                {
                    "player_id": pid,
                    "role": role,
                    "history_length": min(dataset.appearance_count(pid), cfg.history_length),
                }
                for pid, role in sorted(rosters[team].items())
            ],
        }

    @app.post("/api/predict")
    def predict(req: PredictRequest):
        for team in (req.home_team, req.away_team):
            if team not in rosters:
                raise HTTPException(status_code=404, detail=f"unknown team {team}")
        home = req.rosters.get("home", [])
        away = req.rosters.get("away", [])
        if not isinstance(home, list) or not isinstance(away, list) or not home or not away:
            raise HTTPException(status_code=400, detail="rosters need non-empty home and away lists")
        for pid in list(home) + list(away):
            if pid not in known_players:
                raise HTTPException(status_code=404, detail=f"unknown player {pid}")
        pred = hypothetical_prediction(artifacts, req.home_team, req.away_team, home, away)
        return {"v": API_VERSION, **pred.record()}

    @app.post("/api/whatif")
    def whatif(req: WhatIfRequest):
        if req.team_id not in rosters:
            raise HTTPException(status_code=404, detail=f"unknown team {req.team_id}")
        for sub in req.substitutions:
            if sub.in_player not in known_players:
                raise HTTPException(status_code=404, detail=f"unknown player {sub.in_player}")
        try:
            report = substitution_analysis(
                artifacts.model, dataset, artifacts.store, artifacts.z_team,
                req.team_id, [(s.out_player, s.in_player) for s in req.substitutions],
                opponent=req.opponent,
            )
        except SubstitutionError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except DataError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"v": API_VERSION, **report.to_dict()}

    if frontend_dir and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
