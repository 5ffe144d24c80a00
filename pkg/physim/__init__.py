"""Finite-dimensional single-world quantum simulation with macrostate assignment."""

__version__ = "0.1.0"
