"""Generative OOD training data for an (n+1)-class detector."""

__version__ = "0.1.0"
