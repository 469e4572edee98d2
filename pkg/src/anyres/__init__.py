"""Preprocessing and planning utilities for any-resolution vision-language training."""

__version__ = "0.1.0"
