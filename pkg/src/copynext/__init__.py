"""Span transduction with pointer and CopyNext decisions."""

__version__ = "0.1.0"
