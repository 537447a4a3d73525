"""Adomian-type series solutions of a quadratic BSDE, with exact examples,
a finite-difference cascade solver and Monte Carlo verification."""

__version__ = "0.1.0"
