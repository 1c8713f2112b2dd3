"""Synthetic league generator: determinism, symmetry and the Bayes oracle."""

import numpy as np
import pytest

from higformer.synth import (
    ConfigError,
    LeagueConfig,
    bayes_optimal_accuracy,
    outcome_probabilities,
    synthesize_league,
)


class TestOutcomeModel:
    def test_equal_strength_symmetry(self):
        p_win, p_draw, p_lose = outcome_probabilities(0.0, 0.6)
        assert p_win == pytest.approx(p_lose)
        assert p_win + p_draw + p_lose == pytest.approx(1.0)

    def test_sign_flip_swaps_win_lose(self):
        for delta in (0.3, 1.0, 2.5):
            w1, d1, l1 = outcome_probabilities(delta, 0.7)
            w2, d2, l2 = outcome_probabilities(-delta, 0.7)
            assert w1 == pytest.approx(l2)
            assert l1 == pytest.approx(w2)
            assert d1 == pytest.approx(d2)

    def test_monotone_in_delta(self):
        wins = [outcome_probabilities(d, 0.6)[0] for d in np.linspace(-3, 3, 20)]
        assert all(a < b for a, b in zip(wins, wins[1:]))


class TestSynthesizeLeague:
    def test_same_seed_byte_identical(self):
        config = LeagueConfig(n_teams=4, n_players_per_team=5, n_rounds=1, seed=11)
        a = synthesize_league(config)
        b = synthesize_league(config)
        assert a.event_bytes() == b.event_bytes()
        assert a.metadata_bytes() == b.metadata_bytes()
        assert a.manifest_bytes() == b.manifest_bytes()

    def test_different_seed_differs(self):
        a = synthesize_league(LeagueConfig(n_teams=4, n_players_per_team=5, n_rounds=1, seed=1))
        b = synthesize_league(LeagueConfig(n_teams=4, n_players_per_team=5, n_rounds=1, seed=2))
        assert a.event_bytes() != b.event_bytes()

    def test_round_robin_fixture_count(self):
        league = synthesize_league(LeagueConfig(n_teams=6, n_players_per_team=4, n_rounds=2, seed=0))
        assert len(league.metadata) == 2 * 6 * 5 // 2

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            synthesize_league(LeagueConfig(n_teams=5))
        with pytest.raises(ConfigError):
            synthesize_league(LeagueConfig(n_teams=0))
        with pytest.raises(ConfigError):
            synthesize_league(LeagueConfig(n_rounds=0))
        with pytest.raises(ConfigError):
            synthesize_league(LeagueConfig(draw_propensity=0.0))

    def test_schema_round_trips_through_parsers(self):
        league = synthesize_league(LeagueConfig(n_teams=4, n_players_per_team=4, n_rounds=1, seed=3))
        ds = league.to_dataset()
        assert len(ds.matches) == len(league.metadata)
        assert len(ds.train) + len(ds.test) == len(ds.matches)

    def test_manifest_contents(self):
        league = synthesize_league(LeagueConfig(n_teams=4, n_players_per_team=4, n_rounds=1, seed=3))
        m = league.manifest
        assert set(m["team_strengths"]) == {"100", "101", "102", "103"}
        assert 1 / 3 <= m["bayes_optimal_accuracy"] <= 1.0
        strengths = sorted(m["team_strengths"].values())
        assert strengths[-1] - strengths[0] == pytest.approx(league.config.strength_spread)


class TestBayesOracle:
    def test_monte_carlo_agreement(self):
        """Closed-form Bayes accuracy matches simulation over 1e5 fixtures."""
        config = LeagueConfig(n_teams=10, n_players_per_team=4, n_rounds=1,
                              strength_spread=2.0, seed=9)
        league = synthesize_league(config)
        expected = league.manifest["bayes_optimal_accuracy"]

        strengths = league.manifest["team_strengths"]
        deltas = np.array([
            strengths[str(m["homeTeamId"])] - strengths[str(m["awayTeamId"])]
            for m in league.metadata
        ])
        rng = np.random.default_rng(123)
        n_sim = 100_000
        picks = rng.integers(0, len(deltas), size=n_sim)
        correct = 0
        for d in deltas[picks]:
            probs = outcome_probabilities(d, config.draw_propensity)
            outcome = rng.choice(3, p=probs)
            correct += int(outcome == int(np.argmax(probs)))
        simulated = correct / n_sim
        assert abs(simulated - expected) < 0.005

    def test_empty_fixture_list(self):
        assert bayes_optimal_accuracy([], 0.5) == 0.0
