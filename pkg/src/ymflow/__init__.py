"""Donaldson heat flow on flat complex tori, with filtration geometry and flow diagnostics."""

__version__ = "0.1.0"
