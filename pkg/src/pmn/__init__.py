"""Prototype matching networks for multi-label TF binding site classification."""

__version__ = "0.1.0"
