"""Steganographic codec driving arithmetic-coding sampling with entropy-maximized token distributions."""

__version__ = "0.1.0"
