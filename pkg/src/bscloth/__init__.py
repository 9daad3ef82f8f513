"""Thin-shell cloth simulation on quadratic B-spline sheets."""

__version__ = "0.1.0"
