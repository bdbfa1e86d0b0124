"""Lying-posture classification from a single tri-axial accelerometer."""

__version__ = "0.1.0"
