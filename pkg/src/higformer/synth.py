"""Synthetic league generator with a known-optimum outcome process.

Teams get latent strengths evenly spread over ``strength_spread``. For a
fixture with strength difference ``delta = s_home - s_away + home_advantage``
the outcome distribution is the documented three-way logistic

    P(win), P(draw), P(lose)  proportional to  exp(delta/2), nu, exp(-delta/2)

with ``nu = draw_propensity``. The best achievable classification accuracy
(predict the argmax class per fixture) is therefore computable in closed
form and is emitted in the sidecar manifest alongside the team strengths.

Event counts are Poisson with per-role base rates scaled by
``exp(signal_k * (advantage))`` where ``advantage = (s_team - s_opp)/2 +
player_skill``, so histories carry a recoverable strength signal. Pass
receivers are sampled preferring skilled teammates, duel/foul counterparts
preferring active opponents, planting interaction structure as well.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import EVENT_KINDS, build_match_dataset, parse_event_stream, parse_match_metadata

DIVISION = "SYN"

# per-role Poisson base rates, indexed like EVENT_KINDS
BASE_RATES = {
    "GK": [0.8, 0.3, 1.0, 1.5, 0.5, 0.02, 1.0, 14.0, 2.5, 0.02],
    "DF": [5.0, 1.2, 1.0, 0.02, 0.8, 0.10, 2.5, 24.0, 0.02, 0.4],
    "MF": [6.0, 1.4, 1.5, 0.01, 0.8, 0.25, 3.0, 30.0, 0.01, 1.2],
    "FW": [5.0, 1.1, 0.8, 0.01, 0.6, 1.00, 2.5, 16.0, 0.01, 2.2],
}

# per-kind sensitivity to strength advantage (saves/keeper events rise when outmatched)
SIGNAL = [0.15, -0.10, 0.10, -0.30, 0.0, 0.25, 0.20, 0.45, -0.50, 0.70]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LeagueConfig:
    n_teams: int = 10
    n_players_per_team: int = 14
    n_rounds: int = 4
    strength_spread: float = 2.0
    draw_propensity: float = 0.6
    home_advantage: float = 0.0
    event_signal: float = 1.0
    player_noise: float = 0.15
    rate_scale: float = 1.0
    n_pass_partners: int = 4
    n_duel_targets: int = 3
    seed: int = 0

    def validate(self):
        if self.n_teams < 2 or self.n_teams % 2:
            raise ConfigError("n_teams must be even and >= 2")
        if self.n_players_per_team < 2:
            raise ConfigError("n_players_per_team must be >= 2")
        if self.n_rounds < 1:
            raise ConfigError("n_rounds must be >= 1")
        if self.strength_spread < 0 or self.draw_propensity <= 0 or self.rate_scale <= 0:
            raise ConfigError("spread must be >= 0, draw_propensity and rate_scale > 0")


def outcome_probabilities(delta: float, draw_propensity: float):
    """(P(win), P(draw), P(lose)) for a home strength advantage ``delta``."""
    w = np.exp(delta / 2.0)
    l = np.exp(-delta / 2.0)
    z = w + draw_propensity + l
    return w / z, draw_propensity / z, l / z


def bayes_optimal_accuracy(deltas, draw_propensity: float) -> float:
    """Expected accuracy of the argmax-class predictor over the fixtures."""
    if len(deltas) == 0:
        return 0.0
    best = [max(outcome_probabilities(d, draw_propensity)) for d in deltas]
    return float(np.mean(best))


def _round_robin_schedule(n_teams: int, n_rounds: int):
    """Circle-method fixtures; home/away flips between successive rounds."""
    teams = list(range(n_teams))
    fixtures = []
    matchday = 0
    for rnd in range(n_rounds):
        rotation = teams[:]
        for _ in range(n_teams - 1):
            for i in range(n_teams // 2):
                a, b = rotation[i], rotation[n_teams - 1 - i]
                home, away = (a, b) if (rnd + i) % 2 == 0 else (b, a)
                fixtures.append((matchday, home, away))
            rotation = [rotation[0]] + [rotation[-1]] + rotation[1:-1]
            matchday += 1
    return fixtures


def _role_list(n_players: int):
    pattern = ["GK"] + ["DF"] * 5 + ["MF"] * 4 + ["FW"] * 3
    roles = []
    while len(roles) < n_players:
        roles.extend(pattern)
    return roles[:n_players]


@dataclass
class SyntheticLeague:
    config: LeagueConfig
    events: list
    metadata: list
    manifest: dict

    def event_bytes(self) -> bytes:
        return b"".join(json.dumps(e, sort_keys=True).encode() + b"\n" for e in self.events)

    def metadata_bytes(self) -> bytes:
        return b"".join(json.dumps(m, sort_keys=True).encode() + b"\n" for m in self.metadata)

    def manifest_bytes(self) -> bytes:
        return json.dumps(self.manifest, sort_keys=True, indent=2).encode() + b"\n"

    def write(self, out_dir):
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "events.ndjson").write_bytes(self.event_bytes())
        (out / "matches.ndjson").write_bytes(self.metadata_bytes())
        (out / "league_manifest.json").write_bytes(self.manifest_bytes())
        return out

    def to_dataset(self):
        """Round-trip through the real parsers so tests exercise the ingest path."""
        events = parse_event_stream(self.event_bytes())
        metas = parse_match_metadata(self.metadata_bytes())
        return build_match_dataset(events, metas)


def synthesize_league(config: LeagueConfig) -> SyntheticLeague:
    config.validate()
    rng = np.random.default_rng(config.seed)

    n = config.n_teams
    team_ids = [100 + i for i in range(n)]
    strengths = config.strength_spread * (np.arange(n) / max(n - 1, 1) - 0.5)
    roles = _role_list(config.n_players_per_team)

    players = {}  # team index -> list of (player_id, role, skill)
    for t in range(n):
        skills = rng.normal(0.0, config.player_noise, size=config.n_players_per_team)
        players[t] = [
            (1000 + t * 100 + j, roles[j], float(skills[j]))
            for j in range(config.n_players_per_team)
        ]

    fixtures = _round_robin_schedule(n, config.n_rounds)
    start = datetime.date(2023, 8, 5)
    base = np.array([BASE_RATES[r] for r in roles]) * config.rate_scale
    signal = np.array(SIGNAL) * config.event_signal

    events = []
    metadata = []
    deltas = []
    for match_idx, (matchday, home, away) in enumerate(fixtures):
        match_id = 1 + match_idx
        date = start + datetime.timedelta(days=3 * matchday)
        delta = float(strengths[home] - strengths[away] + config.home_advantage)
        deltas.append(delta)
        p_win, p_draw, p_lose = outcome_probabilities(delta, config.draw_propensity)
        outcome = rng.choice(3, p=[p_win, p_draw, p_lose])  # 0 win, 1 draw, 2 lose
        if outcome == 1:
            home_goals = away_goals = int(rng.poisson(1.0))
        elif outcome == 0:
            away_goals = int(rng.poisson(0.8))
            home_goals = away_goals + 1 + int(rng.poisson(0.6))
        else:
            home_goals = int(rng.poisson(0.8))
            away_goals = home_goals + 1 + int(rng.poisson(0.6))

        match_events = []
        for side, team_idx, opp_idx in (("home", home, away), ("away", away, home)):
            team_id = team_ids[team_idx]
            squad = players[team_idx]
            opponents = players[opp_idx]
            edge = (strengths[team_idx] - strengths[opp_idx]) / 2.0
            for slot, (pid, role, skill) in enumerate(squad):
                # preferred pass receivers and duel opponents, skill-weighted
                others = [q for q in range(len(squad)) if q != slot]
                mate_pref = sorted(
                    rng.choice(others, size=min(config.n_pass_partners, len(others)),
                               replace=False).tolist()
                )
                mate_w = np.array([np.exp(0.8 * squad[q][2]) for q in mate_pref])
                mate_w /= mate_w.sum()
                opp_pref = sorted(
                    rng.choice(len(opponents),
                               size=min(config.n_duel_targets, len(opponents)),
                               replace=False).tolist()
                )
                opp_w = np.array([np.exp(0.5 * opponents[q][2]) for q in opp_pref])
                opp_w /= opp_w.sum()
                rates = base[slot] * np.exp(signal * (edge + skill))
                counts = rng.poisson(rates)
                for kind_idx, count in enumerate(counts):
                    kind = EVENT_KINDS[kind_idx]
                    for _ in range(int(count)):
                        counterpart = -1
                        if kind == "pass":
                            counterpart = squad[mate_pref[rng.choice(len(mate_pref), p=mate_w)]][0]
                        elif kind in ("duel", "foul"):
                            counterpart = opponents[opp_pref[rng.choice(len(opp_pref), p=opp_w)]][0]
                        match_events.append(
                            {
                                "matchId": match_id,
                                "divisionId": DIVISION,
                                "eventSec": round(float(rng.uniform(0.0, 5700.0)), 1),
                                "eventName": kind,
                                "playerId": pid,
                                "teamId": team_id,
                                "counterpartPlayerId": int(counterpart),
                            }
                        )
        match_events.sort(key=lambda e: (e["eventSec"], e["playerId"], e["eventName"]))
        events.extend(match_events)

        lineups = {}
        for team_idx in (home, away):
            lineups[str(team_ids[team_idx])] = [
                {"playerId": pid, "role": role, "started": slot < 11}
                for slot, (pid, role, _) in enumerate(players[team_idx])
            ]
        metadata.append(
            {
                "matchId": match_id,
                "divisionId": DIVISION,
                "dateISO8601": date.isoformat(),
                "homeTeamId": team_ids[home],
                "awayTeamId": team_ids[away],
                "homeGoals": home_goals,
                "awayGoals": away_goals,
                "lineups": lineups,
            }
        )

    n_matches = len(fixtures)
    n_train = (n_matches * 4) // 5
    manifest = {
        "version": 1,
        "config": asdict(config),
        "team_strengths": {str(team_ids[t]): float(strengths[t]) for t in range(n)},
        "player_skills": {
            str(pid): skill for t in range(n) for pid, _, skill in players[t]
        },
        "bayes_optimal_accuracy": bayes_optimal_accuracy(deltas, config.draw_propensity),
        "bayes_optimal_accuracy_test": bayes_optimal_accuracy(
            deltas[n_train:], config.draw_propensity
        ),
        "n_matches": n_matches,
    }
    return SyntheticLeague(config=config, events=events, metadata=metadata, manifest=manifest)
