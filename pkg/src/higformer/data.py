"""Event-stream ingestion and match dataset construction.

Input files are JSON: either newline-delimited objects or a single array.
Event records carry ``matchId``, ``divisionId``, ``eventSec``, ``eventName``
(one of the ten supported kinds), ``playerId``, ``teamId`` and an optional
``counterpartPlayerId`` (-1 or missing means absent). Match metadata records
carry ``matchId``, ``divisionId``, ``dateISO8601``, ``homeTeamId``,
``awayTeamId``, ``homeGoals``, ``awayGoals`` and ``lineups`` mapping team id
to a list of ``{playerId, role, started}`` entries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

EVENT_KINDS = (
    "duel",
    "foul",
    "free kick",
    "goalkeeper leaving the line",
    "interruption",
    "offside",
    "others on the ball",
    "pass",
    "save attempt",
    "shot",
)
EVENT_INDEX = {name: i for i, name in enumerate(EVENT_KINDS)}
N_EVENT_KINDS = len(EVENT_KINDS)

ROLES = ("GK", "DF", "MF", "FW")
OUTCOMES = ("win", "draw", "lose")


class ParseError(ValueError):
    """Malformed input record; message names the offending line/record."""


class SchemaError(ValueError):
    """Structurally valid input that violates the documented schema."""


class DataError(ValueError):
    """Inconsistent dataset content (e.g. empty lineup, unknown match)."""


@dataclass(frozen=True)
class EventRecord:
    match_id: int
    division: str
    timestamp: float
    event_type: str
    actor_player_id: int
    actor_team_id: int
    counterpart_player_id: Optional[int] = None


@dataclass(frozen=True)
class PlayerMatchLine:
    match_id: int
    player_id: int
    team_id: int
    role: str
    counts: tuple
    outcome: str
    started: bool = True

    def counts_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64)


@dataclass(frozen=True)
class MatchRecord:
    match_id: int
    division: str
    date: str
    home_team_id: int
    away_team_id: int
    home_players: tuple
    away_players: tuple
    label: str

    def players(self):
        return self.home_players + self.away_players

    def sort_key(self):
        return (self.date, self.match_id)


@dataclass
class HistoryWindow:
    """A player's most recent past-match lines, oldest first."""

    player_id: int
    capacity: int
    entries: list = field(default_factory=list)  # [(match_id, PlayerMatchLine)]

    def __len__(self):
        return len(self.entries)

    def match_ids(self):
        return [mid for mid, _ in self.entries]


def _iter_json_records(raw):
    """Yield (location, dict) from NDJSON or a JSON array."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    stripped = raw.lstrip()
    if not stripped:
        return
    if stripped.startswith("["):
        try:
            records = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON array at offset {exc.pos}: {exc.msg}") from None
        for i, rec in enumerate(records):
            if not isinstance(rec, dict):
                raise ParseError(f"record {i}: expected an object, got {type(rec).__name__}")
            yield f"record {i}", rec
    else:
        for lineno, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON at column {exc.colno}: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise ParseError(f"line {lineno}: expected an object, got {type(rec).__name__}")
            yield f"line {lineno}", rec


def _require(rec, where, key, kind):
    if key not in rec:
        raise ParseError(f"{where}: missing field {key!r}")
    value = rec[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ParseError(f"{where}: field {key!r} must be numeric")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ParseError(f"{where}: field {key!r} must be an integer")
        return value
    if not isinstance(value, kind):
        raise ParseError(f"{where}: field {key!r} must be {kind.__name__}")
    return value


def parse_event_stream(raw) -> list:
    """Parse raw event-file content into EventRecords, order preserved."""
    events = []
    for where, rec in _iter_json_records(raw):
        name = _require(rec, where, "eventName", str)
        if name not in EVENT_INDEX:
            raise SchemaError(f"{where}: unknown eventName {name!r}")
        counterpart = rec.get("counterpartPlayerId", -1)
        if counterpart is not None and (not isinstance(counterpart, int) or isinstance(counterpart, bool)):
            raise ParseError(f"{where}: field 'counterpartPlayerId' must be an integer")
        events.append(
            EventRecord(
                match_id=_require(rec, where, "matchId", int),
                division=_require(rec, where, "divisionId", str),
                timestamp=_require(rec, where, "eventSec", float),
                event_type=name,
                actor_player_id=_require(rec, where, "playerId", int),
                actor_team_id=_require(rec, where, "teamId", int),
                counterpart_player_id=None if counterpart in (-1, None) else counterpart,
            )
        )
    return events


def parse_match_metadata(raw) -> list:
    """Parse raw match-metadata content into plain dicts (validated)."""
    metas = []
    for where, rec in _iter_json_records(raw):
        meta = {
            "match_id": _require(rec, where, "matchId", int),
            "division": _require(rec, where, "divisionId", str),
            "date": _require(rec, where, "dateISO8601", str),
            "home_team_id": _require(rec, where, "homeTeamId", int),
            "away_team_id": _require(rec, where, "awayTeamId", int),
            "home_goals": _require(rec, where, "homeGoals", int),
            "away_goals": _require(rec, where, "awayGoals", int),
        }
        lineups = _require(rec, where, "lineups", dict)
        parsed_lineups = {}
        for team_key, entries in lineups.items():
            try:
                team_id = int(team_key)
            except ValueError:
                raise ParseError(f"{where}: lineup team key {team_key!r} is not an integer") from None
            players = []
            for entry in entries:
                role = entry.get("role")
                if role not in ROLES:
                    raise SchemaError(f"{where}: invalid role {role!r} for player {entry.get('playerId')}")
                players.append(
                    {
                        "player_id": int(entry["playerId"]),
                        "role": role,
                        "started": bool(entry.get("started", True)),
                    }
                )
            parsed_lineups[team_id] = players
        if meta["home_team_id"] == meta["away_team_id"]:
            raise SchemaError(f"{where}: home and away team ids are identical")
        for side in ("home_team_id", "away_team_id"):
            if meta[side] not in parsed_lineups:
                raise SchemaError(f"{where}: no lineup for team {meta[side]}")
        meta["lineups"] = parsed_lineups
        metas.append(meta)
    return metas


def label_from_goals(home_goals: int, away_goals: int) -> str:
    if home_goals > away_goals:
        return "win"
    if home_goals < away_goals:
        return "lose"
    return "draw"


def flip_outcome(label: str) -> str:
    return {"win": "lose", "lose": "win", "draw": "draw"}[label]


def compute_event_counts(events: Iterable[EventRecord], match_id: int, player_id: int) -> np.ndarray:
    """Per-kind event counts performed by ``player_id`` in ``match_id``.

    Counterpart involvement does not count; a player absent from the
    match yields the zero vector.
    """
    counts = np.zeros(N_EVENT_KINDS, dtype=np.float64)
    for ev in events:
        if ev.match_id == match_id and ev.actor_player_id == player_id:
            counts[EVENT_INDEX[ev.event_type]] += 1
    return counts


@dataclass
class MatchDataset:
    """Chronologically split matches with per-player lines and event groups."""

    train: list
    test: list
    lines: dict  # match_id -> list[PlayerMatchLine]
    events_by_match: dict  # match_id -> list[EventRecord]
    matches: dict  # match_id -> MatchRecord
    roles: dict  # player_id -> last seen role

    def __post_init__(self):
        self._appearances = {}
        ordered = sorted(self.matches.values(), key=MatchRecord.sort_key)
        for match in ordered:
            for line in self.lines[match.match_id]:
                self._appearances.setdefault(line.player_id, []).append(match)

    def all_matches(self):
        return sorted(self.matches.values(), key=MatchRecord.sort_key)

    def divisions(self):
        return sorted({m.division for m in self.matches.values()})

    def team_ids(self):
        teams = set()
        for m in self.matches.values():
            teams.add(m.home_team_id)
            teams.add(m.away_team_id)
        return sorted(teams)

    def line_for(self, match_id: int, player_id: int) -> PlayerMatchLine:
        for line in self.lines[match_id]:
            if line.player_id == player_id:
                return line
        raise DataError(f"player {player_id} has no line in match {match_id}")

    def player_history(self, player_id: int, query_match_id: int, capacity: int,
                       cross_division: bool = True) -> HistoryWindow:
        """The player's most recent <= capacity lines strictly before the query match."""
        if query_match_id not in self.matches:
            raise DataError(f"unknown match {query_match_id}")
        query = self.matches[query_match_id]
        window = HistoryWindow(player_id=player_id, capacity=capacity)
        past = []
        for match in self._appearances.get(player_id, []):
            if match.sort_key() >= query.sort_key():
                continue
            if not cross_division and match.division != query.division:
                continue
            past.append(match)
        for match in past[-capacity:]:
            window.entries.append((match.match_id, self.line_for(match.match_id, player_id)))
        return window

    def history_match_ids(self, player_id, query_match_id, capacity, cross_division=True):
        return self.player_history(player_id, query_match_id, capacity, cross_division).match_ids()

    def latest_match_ids(self, player_id, capacity):
        """The player's most recent <= capacity appearances over the whole dataset."""
        return [m.match_id for m in self._appearances.get(player_id, [])[-capacity:]]

    def appearance_count(self, player_id) -> int:
        return len(self._appearances.get(player_id, []))


def build_match_dataset(events: list, match_metadata: list, train_fraction: float = 0.8) -> MatchDataset:
    """Derive per-player lines and split each division 80/20 by date.

    Date ties within a division break by match id so the split is total.
    """
    metas = {meta["match_id"]: meta for meta in match_metadata}
    events_by_match = {mid: [] for mid in metas}
    for ev in events:
        if ev.match_id not in metas:
            raise DataError(f"event references unknown match {ev.match_id}")
        events_by_match[ev.match_id].append(ev)

    matches = {}
    lines = {}
    roles = {}
    for mid, meta in metas.items():
        home, away = meta["home_team_id"], meta["away_team_id"]
        label = label_from_goals(meta["home_goals"], meta["away_goals"])
        per_player = {}
        for ev in events_by_match[mid]:
            if ev.actor_player_id not in per_player:
                per_player[ev.actor_player_id] = np.zeros(N_EVENT_KINDS)
            per_player[ev.actor_player_id][EVENT_INDEX[ev.event_type]] += 1

        match_lines = []
        rosters = {}
        for team_id, entries in meta["lineups"].items():
            if not entries:
                raise DataError(f"match {mid}: team {team_id} fields no players")
            outcome = label if team_id == home else flip_outcome(label)
            rosters[team_id] = tuple(e["player_id"] for e in entries)
            if len(entries) > 23:
                raise DataError(f"match {mid}: team {team_id} lists more than 23 players")
            for entry in entries:
                pid = entry["player_id"]
                counts = per_player.get(pid, np.zeros(N_EVENT_KINDS))
                match_lines.append(
                    PlayerMatchLine(
                        match_id=mid,
                        player_id=pid,
                        team_id=team_id,
                        role=entry["role"],
                        counts=tuple(int(c) for c in counts),
                        outcome=outcome,
                        started=entry["started"],
                    )
                )
                roles[pid] = entry["role"]
        matches[mid] = MatchRecord(
            match_id=mid,
            division=meta["division"],
            date=meta["date"],
            home_team_id=home,
            away_team_id=away,
            home_players=rosters[home],
            away_players=rosters[away],
            label=label,
        )
        lines[mid] = match_lines

    train, test = [], []
    by_division = {}
    for match in matches.values():
        by_division.setdefault(match.division, []).append(match)
    for division_matches in by_division.values():
        division_matches.sort(key=MatchRecord.sort_key)
        n_train = (len(division_matches) * int(round(train_fraction * 100))) // 100
        train.extend(division_matches[:n_train])
        test.extend(division_matches[n_train:])
    train.sort(key=MatchRecord.sort_key)
    test.sort(key=MatchRecord.sort_key)

    return MatchDataset(
        train=train,
        test=test,
        lines=lines,
        events_by_match=events_by_match,
        matches=matches,
        roles=roles,
    )


def label_histogram(matches: Iterable[MatchRecord]) -> list:
    """Counts of [win, draw, lose] home-perspective labels."""
    hist = {"win": 0, "draw": 0, "lose": 0}
    for m in matches:
        hist[m.label] += 1
    return [hist["win"], hist["draw"], hist["lose"]]
