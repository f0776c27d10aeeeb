"""Interpretable deep models for transcription factor binding site classification."""

__version__ = "0.1.0"
