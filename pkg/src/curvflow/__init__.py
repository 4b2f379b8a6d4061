"""Discrete biharmonic and Willmore hypersurface flows with verification tools."""

__version__ = "0.1.0"
