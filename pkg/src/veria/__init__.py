"""Synchronized RGB + pseudo-LiDAR instance synthesis with semantic and geometric verification."""

__version__ = "0.1.0"
