"""Numerical toolkit for limit bicharacteristics and quasimode non-solvability witnesses."""

__version__ = "0.1.0"
