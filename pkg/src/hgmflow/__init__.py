"""Normalizing-flow anomaly detection with a hierarchical Gaussian mixture prior."""

__version__ = "0.1.0"
