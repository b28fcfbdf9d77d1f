"""Numerical laboratory for stability of 1-D SDEs with discontinuous drift."""

__version__ = "0.1.0"
