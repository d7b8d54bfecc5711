"""Ratio metrics for A/B tests with intra-user correlation and user segments."""

__version__ = "0.1.0"
