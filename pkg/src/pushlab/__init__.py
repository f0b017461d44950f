"""Deterministic HTTP/2 Server Push laboratory."""

__version__ = "0.1.0"
