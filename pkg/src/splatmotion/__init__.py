"""Gaussian-splatting inverse rendering of human-scene-object interaction motion."""

__version__ = "0.1.0"
