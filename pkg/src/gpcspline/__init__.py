"""Trivariate T-splines over generalized poly-cube domains."""

__version__ = "0.1.0"
