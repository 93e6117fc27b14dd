"""Dual-branch multimodal OOD detection over embedding vectors."""

__version__ = "0.1.0"
