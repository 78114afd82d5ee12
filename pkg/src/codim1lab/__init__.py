"""Numerical embedding operators for surfaces of revolution in R^3."""

__version__ = "0.1.0"
