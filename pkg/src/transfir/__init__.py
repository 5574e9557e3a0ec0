"""Inductive link prediction on temporal knowledge graphs with emerging entities."""

__version__ = "0.1.0"
