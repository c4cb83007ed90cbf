"""Coherent vs incoherent transport on random two-dimensional bond lattices with absorbing traps."""

__version__ = "0.1.0"
