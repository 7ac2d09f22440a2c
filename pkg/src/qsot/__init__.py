"""Quantile-optimal semidiscrete transport plans."""

__version__ = "0.1.0"
