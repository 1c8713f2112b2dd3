"""HTTP endpoints: schemas, status codes and module equivalence."""

import json

import pytest
from fastapi.testclient import TestClient

from higformer import pipeline
from higformer.analysis import substitution_analysis
from higformer.service import create_app


@pytest.fixture(scope="module")
def client(cli_workspace):
    artifacts = pipeline.load_artifacts(cli_workspace["config"])
    app = create_app(artifacts)
    return TestClient(app, raise_server_exceptions=False), artifacts


class TestHealth:
    def test_ok(self, client):
        http, _ = client
        res = http.get("/api/health")
        assert res.status_code == 200
        body = res.json()
        assert body["v"] == 1
        assert body["status"] == "ok"
        assert body["trained_stages"] == ["stage1", "stage2"]


class TestTeams:
    def test_covers_league(self, client):
        http, artifacts = client
        res = http.get("/api/teams")
        assert res.status_code == 200
        teams = res.json()["teams"]
        assert len(teams) == len(artifacts.dataset.team_ids())
        for team in teams:
            assert set(team) == {"team_id", "roster", "n_test_fixtures", "baseline"}
            if team["baseline"] is not None:
                assert sum(team["baseline"].values()) == pytest.approx(100.0)
            assert len(team["roster"]) > 0


class TestPlayers:
    def test_roster_with_roles(self, client):
        http, artifacts = client
        team = artifacts.dataset.team_ids()[0]
        res = http.get("/api/players", params={"team": team})
        assert res.status_code == 200
        players = res.json()["players"]
        assert len(players) == 5
        for p in players:
            assert p["role"] in ("GK", "DF", "MF", "FW")
            assert 0 <= p["history_length"] <= artifacts.model.config.history_length

    def test_unknown_team_404(self, client):
        http, _ = client
        assert http.get("/api/players", params={"team": 9999}).status_code == 404

    def test_missing_param_400(self, client):
        http, _ = client
        assert http.get("/api/players").status_code == 400


class TestPredict:
    def test_roundtrip(self, client):
        http, artifacts = client
        ds = artifacts.dataset
        match = ds.test[0]
        body = {
            "home_team": match.home_team_id,
            "away_team": match.away_team_id,
            "rosters": {"home": list(match.home_players), "away": list(match.away_players)},
        }
        res = http.post("/api/predict", json=body)
        assert res.status_code == 200
        payload = res.json()
        assert payload["v"] == 1
        assert 0.0 < payload["y_hat"] < 1.0
        assert payload["class"] in ("win", "draw", "lose")
        assert payload["r_norm"] > 0 and payload["b_norm"] > 0

    def test_unknown_team_404(self, client):
        http, artifacts = client
        match = artifacts.dataset.test[0]
        body = {"home_team": 424242, "away_team": match.away_team_id,
                "rosters": {"home": [1], "away": [2]}}
        assert http.post("/api/predict", json=body).status_code == 404

    def test_unknown_player_404(self, client):
        http, artifacts = client
        match = artifacts.dataset.test[0]
        body = {"home_team": match.home_team_id, "away_team": match.away_team_id,
                "rosters": {"home": [987654], "away": list(match.away_players)}}
        assert http.post("/api/predict", json=body).status_code == 404

    def test_malformed_body_400(self, client):
        http, _ = client
        assert http.post("/api/predict", json={"home_team": "xyz"}).status_code == 400
        assert http.post("/api/predict", json={}).status_code == 400


class TestWhatIf:
    def fixture_player(self, artifacts):
        ds = artifacts.dataset
        team = ds.team_ids()[0]
        fixtures = [m for m in ds.test if team in (m.home_team_id, m.away_team_id)]
        pid = (fixtures[0].home_players if fixtures[0].home_team_id == team
               else fixtures[0].away_players)[0]
        return team, pid

    def test_empty_substitutions_zero_deltas(self, client):
        http, artifacts = client
        team, _ = self.fixture_player(artifacts)
        res = http.post("/api/whatif", json={"team_id": team, "substitutions": []})
        assert res.status_code == 200
        body = res.json()
        assert body["substitutions"] == []
        assert all(v == 0.0 for v in body["combined"]["deltas"].values())
        assert sum(body["baseline"].values()) == pytest.approx(100.0)

    def test_matches_direct_module_call(self, client):
        """Endpoint output equals substitution_analysis on the same inputs."""
        http, artifacts = client
        team, pid = self.fixture_player(artifacts)
        res = http.post("/api/whatif", json={
            "team_id": team,
            "substitutions": [{"out_player": pid, "in_player": pid}],
        })
        assert res.status_code == 200
        direct = substitution_analysis(
            artifacts.model, artifacts.dataset, artifacts.store, artifacts.z_team,
            team, [(pid, pid)],
        ).to_dict()
        body = res.json()
        body.pop("v")
        assert body == json.loads(json.dumps(direct))

    def test_unknown_team_404(self, client):
        http, _ = client
        assert http.post("/api/whatif", json={"team_id": 31337}).status_code == 404

    def test_historyless_substitute_409(self, client, monkeypatch):
        # every synthetic player plays every match, so force the error path
        import higformer.service as service_module
        from higformer.analysis import SubstitutionError

        def raise_409(*args, **kwargs):
            raise SubstitutionError("player 999 has no history before match 1")

        monkeypatch.setattr(service_module, "substitution_analysis", raise_409)
        http, artifacts = client
        team, pid = self.fixture_player(artifacts)
        res = http.post("/api/whatif", json={
            "team_id": team,
            "substitutions": [{"out_player": pid, "in_player": pid}],
        })
        assert res.status_code == 409
        assert "no history" in res.json()["detail"]

    def test_malformed_substitution_400(self, client):
        http, artifacts = client
        team, _ = self.fixture_player(artifacts)
        res = http.post("/api/whatif", json={
            "team_id": team, "substitutions": [{"out_player": "nope"}],
        })
        assert res.status_code == 400


class TestStatelessness:
    def test_identical_requests_identical_responses(self, client):
        http, artifacts = client
        team = artifacts.dataset.team_ids()[1]
        payload = {"team_id": team, "substitutions": []}
        first = http.post("/api/whatif", json=payload)
        second = http.post("/api/whatif", json=payload)
        assert first.json() == second.json()
        assert http.get("/api/teams").json() == http.get("/api/teams").json()
