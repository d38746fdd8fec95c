"""Transformed error-state Kalman filtering for visual-inertial navigation."""

__version__ = "0.1.0"
