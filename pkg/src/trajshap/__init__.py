"""Trajectory Shapley attribution for sparse, sequential wafer measurements."""

__version__ = "0.1.0"
