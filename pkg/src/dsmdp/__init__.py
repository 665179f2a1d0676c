"""Numerical laboratory for the two-stage decision-sampling retry process."""

__version__ = "0.1.0"
