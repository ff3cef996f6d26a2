"""Stroboscopic detection of itinerant microwave photons: simulation toolkit."""

__version__ = "0.1.0"
