"""Hybrid time-domain / time-frequency-domain speech enhancement toolkit."""

__version__ = "0.1.0"
