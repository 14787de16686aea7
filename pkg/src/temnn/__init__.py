"""Thickness-aware E(3)-equivariant mesh neural network toolkit."""

__version__ = "0.1.0"
