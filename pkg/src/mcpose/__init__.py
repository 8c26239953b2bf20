"""Depth-based 6DoF object pose estimation by Monte-Carlo render-and-compare."""

__version__ = "0.1.0"
