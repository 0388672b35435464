"""Hierarchical pooling of per-modality classifier evidence into gamer skill posteriors."""

__version__ = "0.1.0"
