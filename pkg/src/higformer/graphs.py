"""Interaction graph construction and Laplacian node identifiers.

Player graphs are per-match, directed and typed: pass edges come from
pass events with a recorded receiver, defense edges from duel and foul
events directed actor -> counterpart. Parallel interactions collapse to
one edge per (src, dst, type) carrying the interaction count.

The team graph spans a team universe with one directed edge per pair that
met in the training split, pointing from the historically dominant side
and carrying its head-to-head winning rate; exact ties produce no edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, EventRecord, MatchRecord, N_EVENT_KINDS, EVENT_INDEX

PASS_EDGE, DEFENSE_EDGE = 0, 1
EDGE_TYPE_NAMES = ("pass", "defense")
NODE_TYPE_NAMES = ("home", "away")
GRAPH_CACHE_VERSION = 1

DEFENSE_KINDS = ("duel", "foul")


@dataclass
class PlayerGraph:
    match_id: int
    player_ids: np.ndarray  # (n,) int64
    node_team: np.ndarray  # (n,) int64 team ids
    node_type: np.ndarray  # (n,) int64, 0 home / 1 away
    node_feat: np.ndarray  # (n, 10) event counts
    edge_src: np.ndarray  # (e,) int64 node indices
    edge_dst: np.ndarray  # (e,) int64
    edge_type: np.ndarray  # (e,) int64, 0 pass / 1 defense
    edge_count: np.ndarray  # (e,) float64 >= 1
    roles: tuple = ()
    identifiers: np.ndarray | None = None
    eigenvalues: np.ndarray | None = None

    @property
    def n_nodes(self):
        return len(self.player_ids)

    @property
    def n_edges(self):
        return len(self.edge_src)

    def node_index(self, player_id):
        where = np.nonzero(self.player_ids == player_id)[0]
        if not len(where):
            raise DataError(f"player {player_id} not in graph for match {self.match_id}")
        return int(where[0])


@dataclass
class TeamGraph:
    team_ids: np.ndarray  # (n,) int64, index order is the embedding order
    edge_src: np.ndarray  # (e,) int64 node indices
    edge_dst: np.ndarray
    edge_rate: np.ndarray  # (e,) float64 in (0.5, 1]
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {int(t): i for i, t in enumerate(self.team_ids)}

    @property
    def n_nodes(self):
        return len(self.team_ids)


def build_player_graph(match: MatchRecord, events, on_unlisted: str = "error") -> PlayerGraph:
    """Construct the directed heterogeneous player graph for one match.

    ``on_unlisted`` controls events naming players outside the lineups:
    ``"error"`` raises, ``"drop"`` skips the event.
    """
    players = list(match.home_players) + list(match.away_players)
    index = {pid: i for i, pid in enumerate(players)}
    n = len(players)
    node_type = np.array([0] * len(match.home_players) + [1] * len(match.away_players), dtype=np.int64)
    node_team = np.array(
        [match.home_team_id] * len(match.home_players) + [match.away_team_id] * len(match.away_players),
        dtype=np.int64,
    )
    node_feat = np.zeros((n, N_EVENT_KINDS))
    pair_counts = {}  # (src, dst, type) -> count

    for ev in events:
        if ev.match_id != match.match_id:
            continue
        actor = index.get(ev.actor_player_id)
        counterpart = ev.counterpart_player_id
        other = index.get(counterpart) if counterpart is not None else None
        unlisted = actor is None or (counterpart is not None and other is None)
        if unlisted:
            if on_unlisted == "drop":
                continue
            missing = ev.actor_player_id if actor is None else counterpart
            raise DataError(
                f"match {match.match_id}: event names player {missing} outside the lineups"
            )
        node_feat[actor, EVENT_INDEX[ev.event_type]] += 1
        if other is None:
            continue
        if ev.event_type == "pass":
            key = (actor, other, PASS_EDGE)
        elif ev.event_type in DEFENSE_KINDS:
            key = (actor, other, DEFENSE_EDGE)
        else:
            continue
        pair_counts[key] = pair_counts.get(key, 0) + 1

    keys = sorted(pair_counts)
    edge_src = np.array([k[0] for k in keys], dtype=np.int64)
    edge_dst = np.array([k[1] for k in keys], dtype=np.int64)
    edge_type = np.array([k[2] for k in keys], dtype=np.int64)
    edge_count = np.array([float(pair_counts[k]) for k in keys])

    return PlayerGraph(
        match_id=match.match_id,
        player_ids=np.array(players, dtype=np.int64),
        node_team=node_team,
        node_type=node_type,
        node_feat=node_feat,
        edge_src=edge_src,
        edge_dst=edge_dst,
        edge_type=edge_type,
        edge_count=edge_count,
        roles=tuple(),
    )


def head_to_head_rates(matches):
    """(wins, meetings) per ordered team pair over the given matches."""
    wins = {}
    meetings = {}
    for m in matches:
        pair = frozenset((m.home_team_id, m.away_team_id))
        meetings[pair] = meetings.get(pair, 0) + 1
        if m.label == "win":
            wins[(m.home_team_id, m.away_team_id)] = wins.get((m.home_team_id, m.away_team_id), 0) + 1
        elif m.label == "lose":
            wins[(m.away_team_id, m.home_team_id)] = wins.get((m.away_team_id, m.home_team_id), 0) + 1
    return wins, meetings


def build_team_graph(train_matches, team_universe=None) -> TeamGraph:
    """Directed winning-rate graph from the training split only.

    For each pair that met, the side with the strictly higher historical
    winning rate (wins / meetings, draws favouring neither) gets the edge;
    equal rates yield no edge.
    """
    teams = set(team_universe or [])
    for m in train_matches:
        teams.add(m.home_team_id)
        teams.add(m.away_team_id)
    team_ids = np.array(sorted(teams), dtype=np.int64)
    index = {int(t): i for i, t in enumerate(team_ids)}

    wins, meetings = head_to_head_rates(train_matches)
    src, dst, rate = [], [], []
    for pair, met in sorted(meetings.items(), key=lambda kv: tuple(sorted(kv[0]))):
        a, b = sorted(pair)
        rate_ab = wins.get((a, b), 0) / met
        rate_ba = wins.get((b, a), 0) / met
        if rate_ab > rate_ba:
            src.append(index[a]), dst.append(index[b]), rate.append(rate_ab)
        elif rate_ba > rate_ab:
            src.append(index[b]), dst.append(index[a]), rate.append(rate_ba)
    return TeamGraph(
        team_ids=team_ids,
        edge_src=np.array(src, dtype=np.int64),
        edge_dst=np.array(dst, dtype=np.int64),
        edge_rate=np.array(rate, dtype=np.float64),
    )


def _connected_components(n, adj):
    comp = -np.ones(n, dtype=np.int64)
    current = 0
    for start in range(n):
        if comp[start] >= 0:
            continue
        stack = [start]
        comp[start] = current
        while stack:
            v = stack.pop()
            for u in np.nonzero(adj[v])[0]:
                if comp[u] < 0:
                    comp[u] = current
                    stack.append(int(u))
        current += 1
    return comp, current


def laplacian_node_identifiers(graph: PlayerGraph, d_id: int = 8):
    """Laplacian-eigenvector node identifiers of the type-collapsed graph.

    The edge set is symmetrised and binarised, the symmetric normalized
    Laplacian is eigendecomposed per connected component, the trivial
    constant eigenvector of each component is dropped, and the remaining
    eigenvectors are pooled in ascending-eigenvalue order (ties break
    lexicographically). Signs are fixed so each vector's largest-magnitude
    entry is positive; missing columns are zero-padded.
    """
    n = graph.n_nodes
    adj = np.zeros((n, n))
    for s, d in zip(graph.edge_src, graph.edge_dst):
        if s != d:
            adj[s, d] = 1.0
            adj[d, s] = 1.0
    comp, n_comp = _connected_components(n, adj)

    pool = []  # (eigenvalue, full-length vector)
    for c in range(n_comp):
        nodes = np.nonzero(comp == c)[0]
        m = len(nodes)
        if m == 1:
            continue  # only the trivial eigenvector
        sub = adj[np.ix_(nodes, nodes)]
        deg = sub.sum(axis=1)
        dinv = 1.0 / np.sqrt(deg)
        lap = np.eye(m) - dinv[:, None] * sub * dinv[None, :]
        vals, vecs = np.linalg.eigh(lap)
        for j in range(1, m):  # drop the zero-eigenvalue constant vector
            full = np.zeros(n)
            full[nodes] = vecs[:, j]
            pool.append((float(vals[j]), full))

    pool.sort(key=lambda item: (round(item[0], 9),) + tuple(np.round(item[1], 9)))
    identifiers = np.zeros((n, d_id))
    eigenvalues = np.zeros(d_id)
    for col, (val, vec) in enumerate(pool[:d_id]):
        pivot = int(np.argmax(np.abs(vec)))
        if vec[pivot] < 0:
            vec = -vec
        identifiers[:, col] = vec
        eigenvalues[col] = val
    return identifiers, eigenvalues


def attach_identifiers(graph: PlayerGraph, d_id: int = 8) -> PlayerGraph:
    ids, vals = laplacian_node_identifiers(graph, d_id)
    graph.identifiers = ids
    graph.eigenvalues = vals
    return graph


class GraphCache:
    """One portable .npz per match holding the typed graph and identifiers."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, match_id: int) -> Path:
        return self.directory / f"match_{match_id}.npz"

    def save(self, graph: PlayerGraph):
        np.savez_compressed(
            self.path(graph.match_id),
            version=np.array([GRAPH_CACHE_VERSION]),
            match_id=np.array([graph.match_id]),
            player_ids=graph.player_ids,
            node_team=graph.node_team,
            node_type=graph.node_type,
            node_feat=graph.node_feat,
            edge_src=graph.edge_src,
            edge_dst=graph.edge_dst,
            edge_type=graph.edge_type,
            edge_count=graph.edge_count,
            roles=np.array(graph.roles, dtype="U2"),
            identifiers=graph.identifiers if graph.identifiers is not None else np.zeros((0, 0)),
            eigenvalues=graph.eigenvalues if graph.eigenvalues is not None else np.zeros(0),
        )

    def load(self, match_id: int) -> PlayerGraph:
        path = self.path(match_id)
        if not path.exists():
            raise DataError(f"no cached graph for match {match_id} under {self.directory}")
        with np.load(path, allow_pickle=False) as z:
            version = int(z["version"][0])
            if version != GRAPH_CACHE_VERSION:
                raise DataError(f"graph cache version {version} unsupported")
            ids = z["identifiers"]
            return PlayerGraph(
                match_id=int(z["match_id"][0]),
                player_ids=z["player_ids"],
                node_team=z["node_team"],
                node_type=z["node_type"],
                node_feat=z["node_feat"],
                edge_src=z["edge_src"],
                edge_dst=z["edge_dst"],
                edge_type=z["edge_type"],
                edge_count=z["edge_count"],
                roles=tuple(z["roles"].tolist()),
                identifiers=ids if ids.size else None,
                eigenvalues=z["eigenvalues"] if z["eigenvalues"].size else None,
            )

    def match_ids(self):
        return sorted(int(p.stem.split("_")[1]) for p in self.directory.glob("match_*.npz"))


def build_graph_for_match(dataset, match_id: int, d_id: int = 8, on_unlisted="error") -> PlayerGraph:
    """Build, role-annotate and identifier-equip the graph for one match."""
    match = dataset.matches[match_id]
    graph = build_player_graph(match, dataset.events_by_match[match_id], on_unlisted=on_unlisted)
    role_by_pid = {line.player_id: line.role for line in dataset.lines[match_id]}
    graph.roles = tuple(role_by_pid.get(int(pid), "MF") for pid in graph.player_ids)
    return attach_identifiers(graph, d_id)
