"""Discrete evaluation of harmonic-mean eigenvalue inequalities on triangulated surfaces."""

__version__ = "0.1.0"
