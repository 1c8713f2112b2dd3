"""Player/team interaction-graph model for pre-match soccer outcome prediction."""

__version__ = "0.1.0"
