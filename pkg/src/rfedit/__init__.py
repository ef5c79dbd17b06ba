"""Toy rectified-flow transformer with inference-time attention-output editing."""

__version__ = "0.1.0"
