"""Interpretable knee-onset prediction with temporal and cyclic attention."""

__version__ = "0.1.0"
