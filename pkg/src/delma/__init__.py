"""Distributed detection runtime for large passive-acoustic sound archives."""

__version__ = "0.1.0"
