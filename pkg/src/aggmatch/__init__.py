"""Pseudo-label aggregation for semi-supervised learning, at desk scale."""

__version__ = "0.1.0"
