"""Bayesian spike-and-slab screening of drug exposure effects on rare adverse events."""

__version__ = "0.1.0"
