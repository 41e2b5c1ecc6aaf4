"""Differentially private data publishing by masked data generation."""

__version__ = "0.1.0"
