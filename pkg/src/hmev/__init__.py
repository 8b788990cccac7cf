"""Hierarchical Bayesian extreme-value modelling of intermittent event sequences."""

__version__ = "0.1.0"
