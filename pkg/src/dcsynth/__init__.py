"""Divide-and-conquer parallelization of nested loops by join synthesis."""

__version__ = "0.1.0"
