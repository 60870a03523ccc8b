"""Offline-online numerical homogenization for 2D elliptic problems."""

__version__ = "0.1.0"
