"""Exact fixed-precision attention mechanisms, task oracles and protocol simulators."""

__version__ = "0.1.0"
