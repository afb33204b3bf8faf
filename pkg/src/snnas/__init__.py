"""Spiking-network architecture search with channel/temporal/spatial attention."""

__version__ = "0.1.0"
