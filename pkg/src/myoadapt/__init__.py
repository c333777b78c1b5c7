"""Adaptive HD-sEMG gesture decoding with exactly-incremental RLSC."""

__version__ = "0.1.0"
