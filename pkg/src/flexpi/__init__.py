"""Flexible policy iteration with prioritized replay and supplemental values."""

__version__ = "0.1.0"
