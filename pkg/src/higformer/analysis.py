"""Evaluation reports: per-class accuracy, role-grouped attention and
player-substitution counterfactuals."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, OUTCOMES, ROLES, flip_outcome
from .match_net import classify
from .model import roster_entries_for_match

logger = logging.getLogger(__name__)

SIDE_NAMES = ("HM", "AW")
ROLE_GROUPS = tuple(f"{side}-{role}" for side in SIDE_NAMES for role in ROLES)


class SubstitutionError(ValueError):
    """Requested substitute has no usable embedding history."""


# ---------------------------------------------------------------------------
# accuracy
# ---------------------------------------------------------------------------


@dataclass
class AccuracyReport:
    groups: dict  # name -> {win, draw, lose, avg (percent), n}
    order: list

    def to_dict(self) -> dict:
        return {"groups": self.groups, "order": self.order}

    def table(self) -> str:
        header = f"{'Group':<10}" + "".join(f"{c:>8}" for c in ("Win", "Draw", "Lose", "Avg", "N"))
        lines = [header, "-" * len(header)]
        for name in self.order:
            g = self.groups[name]
            lines.append(
                f"{name:<10}" + "".join(f"{g[c]:>8.2f}" for c in ("win", "draw", "lose", "avg"))
                + f"{g['n']:>8d}"
            )
        return "\n".join(lines)


def _group_accuracy(pred, true) -> dict:
    out = {}
    for cls in OUTCOMES:
        in_class = [p for p, t in zip(pred, true) if t == cls]
        correct = sum(1 for p, t in zip(pred, true) if t == cls and p == cls)
        out[cls] = 100.0 * correct / len(in_class) if in_class else 0.0
    total_correct = sum(1 for p, t in zip(pred, true) if p == t)
    out["avg"] = 100.0 * total_correct / len(true) if true else 0.0
    out["n"] = len(true)
    return out


def per_class_accuracy(predictions, labels, divisions=None) -> AccuracyReport:
    """Win/draw/lose accuracy per division plus micro-average columns."""
    predictions, labels = list(predictions), list(labels)
    if len(predictions) != len(labels):
        raise DataError("prediction/label length mismatch")
    if divisions is not None and len(divisions) != len(labels):
        raise DataError("division/label length mismatch")
    groups = {}
    order = []
    if divisions is not None:
        for div in sorted(set(divisions)):
            mask = [i for i, d in enumerate(divisions) if d == div]
            groups[div] = _group_accuracy([predictions[i] for i in mask],
                                          [labels[i] for i in mask])
            order.append(div)
    groups["Total"] = _group_accuracy(predictions, labels)
    order.append("Total")
    return AccuracyReport(groups=groups, order=order)


# ---------------------------------------------------------------------------
# attention roles
# ---------------------------------------------------------------------------


@dataclass
class RoleAttentionMatrix:
    matrix: np.ndarray  # (8, 8) row-normalized
    groups: tuple = ROLE_GROUPS

    def to_dict(self) -> dict:
        return {"groups": list(self.groups), "matrix": self.matrix.tolist()}

    def table(self) -> str:
        head = f"{'':<8}" + "".join(f"{g:>8}" for g in self.groups)
        lines = [head]
        for name, row in zip(self.groups, self.matrix):
            lines.append(f"{name:<8}" + "".join(f"{v:>8.4f}" for v in row))
        return "\n".join(lines)


def attention_role_matrix(model, graphs, trained: bool = True) -> RoleAttentionMatrix:
    """Average final-layer player-to-player attention grouped by (side, role).

    Edge-token rows/columns are dropped before grouping; raw weights are
    averaged across heads, matches and grouped players, then each of the
    8 rows is renormalized to sum one.
    """
    if not trained:
        logger.warning("attention analysis on an untrained encoder; weights are near-uniform")
    sums = np.zeros((len(ROLE_GROUPS), len(ROLE_GROUPS)))
    counts = np.zeros_like(sums)
    for graph in graphs:
        maps = []
        model.player.encode_global(graph, mode="embeddings", collect_attn=maps)
        final = maps[-1].mean(axis=0)  # average heads -> (tokens, tokens)
        n = graph.n_nodes
        player_block = final[:n, :n]
        group_idx = [
            ROLE_GROUPS.index(f"{SIDE_NAMES[graph.node_type[i]]}-{graph.roles[i]}")
            for i in range(n)
        ]
        for i in range(n):
            for j in range(n):
                sums[group_idx[i], group_idx[j]] += player_block[i, j]
                counts[group_idx[i], group_idx[j]] += 1
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    row_sums = means.sum(axis=1, keepdims=True)
    matrix = np.divide(means, row_sums, out=np.zeros_like(means), where=row_sums > 0)
    return RoleAttentionMatrix(matrix=matrix)


# ---------------------------------------------------------------------------
# substitution counterfactuals
# ---------------------------------------------------------------------------


@dataclass
class SubstitutionReport:
    team_id: int
    n_fixtures: int
    baseline: dict  # class -> percent, team perspective
    substitutions: list = field(default_factory=list)  # {out, in, deltas{...}, mean_y_shift}
    combined: dict = field(default_factory=dict)  # whole set applied at once

    def to_dict(self) -> dict:
        return {
            "team_id": self.team_id,
            "n_fixtures": self.n_fixtures,
            "baseline": self.baseline,
            "substitutions": self.substitutions,
            "combined": self.combined,
        }

    def table(self) -> str:
        lines = [
            f"{'Team -> Player':<28}{'Win':>9}{'Draw':>9}{'Lose':>9}",
            f"{f'Team {self.team_id}':<28}"
            + "".join(f"{self.baseline[c]:>9.2f}" for c in OUTCOMES),
        ]
        for sub in self.substitutions:
            name = f"-> {sub['in']} (for {sub['out']})"
            lines.append(
                f"{name:<28}" + "".join(f"{sub['deltas'][c]:>+9.2f}" for c in OUTCOMES)
            )
        return "\n".join(lines)


def _team_distribution(model, dataset, store, z_team, team_id, fixtures,
                       substitutions=None):
    """Predicted outcome distribution (team perspective, percent) plus the
    mean team-perspective win score over the fixtures."""
    cfg = model.config
    tally = {c: 0 for c in OUTCOMES}
    y_scores = []
    for match in fixtures:
        subs = substitutions if substitutions else None
        entries = roster_entries_for_match(
            dataset, match, cfg.history_length,
            cross_division=cfg.cross_division_history, substitutions=subs,
        )
        team_rows = (model.team.index[match.home_team_id], model.team.index[match.away_team_id])
        pred = model.predict_match(match, entries, store, z_team, team_rows)
        home = match.home_team_id == team_id
        label = pred.outcome_class if home else flip_outcome(pred.outcome_class)
        tally[label] += 1
        y_scores.append(pred.y_hat if home else 1.0 - pred.y_hat)
    n = len(fixtures)
    dist = {c: 100.0 * tally[c] / n for c in OUTCOMES}
    return dist, np.array(y_scores)


def substitution_analysis(model, dataset, store, z_team, team_id: int,
                          substitutions, fixtures=None, opponent=None) -> SubstitutionReport:
    """Re-predict a team's test fixtures with swapped player embeddings.

    Each substitution (out_player, in_player) replaces the outgoing slot's
    pooled-history source while keeping the host team identity. Deltas are
    percentage points versus the unmodified baseline.
    """
    if fixtures is None:
        fixtures = [m for m in dataset.test
                    if team_id in (m.home_team_id, m.away_team_id)]
    if opponent is not None:
        fixtures = [m for m in fixtures
                    if opponent in (m.home_team_id, m.away_team_id)]
    if not fixtures:
        raise DataError(f"team {team_id} has no test fixtures to analyse")
    roster = set()
    for m in fixtures:
        roster.update(m.home_players if m.home_team_id == team_id else m.away_players)

    baseline, base_scores = _team_distribution(model, dataset, store, z_team, team_id, fixtures)
    report = SubstitutionReport(team_id=team_id, n_fixtures=len(fixtures), baseline=baseline)

    seen_out = set()
    for out_player, in_player in substitutions:
        if out_player not in roster:
            raise DataError(f"player {out_player} is not in team {team_id}'s fixture rosters")
        if out_player in seen_out:
            raise DataError(f"player {out_player} appears twice as an outgoing substitution")
        seen_out.add(out_player)
        for m in fixtures:
            if not dataset.history_match_ids(in_player, m.match_id, model.config.history_length,
                                             cross_division=model.config.cross_division_history):
                raise SubstitutionError(
                    f"player {in_player} has no history before match {m.match_id}"
                )
        dist, scores = _team_distribution(
            model, dataset, store, z_team, team_id, fixtures, substitutions={out_player: in_player}
        )
        report.substitutions.append(
            {
                "out": out_player,
                "in": in_player,
                "deltas": {c: dist[c] - baseline[c] for c in OUTCOMES},
                "mean_y_shift": float(np.mean(scores - base_scores)),
            }
        )

    if len(substitutions) > 1:
        joint = {out: inp for out, inp in substitutions}
        dist, _ = _team_distribution(
            model, dataset, store, z_team, team_id, fixtures, substitutions=joint
        )
    elif report.substitutions:
        dist = {c: baseline[c] + report.substitutions[0]["deltas"][c] for c in OUTCOMES}
    else:
        dist = dict(baseline)
    report.combined = {
        "distribution": dist,
        "deltas": {c: dist[c] - baseline[c] for c in OUTCOMES},
    }
    return report
