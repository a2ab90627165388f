"""Streaming drift detectors driven by distances to class centroids in a learned embedding."""

__version__ = "0.1.0"
