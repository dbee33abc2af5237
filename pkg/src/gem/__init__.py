"""Controlled text generation with target words, plus the claims pipeline."""

__version__ = "0.1.0"
