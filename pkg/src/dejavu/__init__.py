"""Deterministic simulator for temporal-misalignment attacks on sensor fusion."""
__version__ = "0.3.0"
