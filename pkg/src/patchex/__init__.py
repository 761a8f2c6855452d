"""Patch-based frame extrapolation for temporal supersampling."""

__version__ = "0.1.0"
