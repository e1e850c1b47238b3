"""Numerical laboratory for conformal eigenvalue suprema on surfaces."""

__version__ = "0.1.0"
