"""Windowed junction-tree inference for discrete dynamic probabilistic networks."""

__version__ = "0.1.0"
