"""Depth search with a truncated-Poisson posterior inside a deep active-learning loop."""

__version__ = "0.1.0"
