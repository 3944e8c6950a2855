"""Pseudodifferential operators on the circle: symbols, regularized traces, extensions, gerbes, FIOs and derivations."""

__version__ = "0.1.0"
