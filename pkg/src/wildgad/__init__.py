"""Graph anomaly detection helped by selected external graphs."""

__version__ = "0.1.0"
