"""Coupling and mixing experiments for semi-contractive count and volatility models."""

__version__ = "0.1.0"
