"""Simulator for federated learning with analog over-the-air gradient aggregation under Byzantine attack."""

__version__ = "0.1.0"
