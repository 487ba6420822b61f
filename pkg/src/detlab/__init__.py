"""Numerical laboratory for the determinant functional on divergence-measure
matrix fields over the torus."""

__version__ = "0.1.0"
