"""Spectral muP: norms, GQA-aware scaling rules, a small GQA transformer and coordinate checks."""

__version__ = "0.1.0"
