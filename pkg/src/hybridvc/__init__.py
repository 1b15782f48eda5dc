"""Hybrid motion-mode video codec with RD-optimized block decisions."""

__version__ = "0.1.0"
