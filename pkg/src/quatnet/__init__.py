"""Quaternion-valued neural networks for acoustic sequence modelling."""

__version__ = "0.1.0"
