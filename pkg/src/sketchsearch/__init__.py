"""Sketch-based slice retrieval over decomposed anatomy codes."""

__version__ = "0.1.0"
