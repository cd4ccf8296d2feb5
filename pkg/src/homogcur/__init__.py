"""Lattice-chain toolkit for periodic line energies and their homogenized line tension."""

__version__ = "0.1.0"
