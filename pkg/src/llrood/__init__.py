"""Likelihood-ratio out-of-distribution detection for discrete sequences."""

__version__ = "0.1.0"
