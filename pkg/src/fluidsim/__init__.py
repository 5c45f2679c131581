"""Simulator for learning, inference and model downloads over LEO satellite constellations."""

__version__ = "0.1.0"
