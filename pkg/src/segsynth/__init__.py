"""Retrieval-based image synthesis from semantic layouts."""

__version__ = "0.1.0"
