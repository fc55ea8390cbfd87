"""Monocular depth estimation with hierarchical adapters, pyramid fusion and a window CRF decoder."""

__version__ = "0.1.0"
