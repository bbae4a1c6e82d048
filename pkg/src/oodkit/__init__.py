"""Toolkit for choosing out-of-distribution detectors on mixed-type tabular data."""

__version__ = "0.1.0"
