"""Distributional Einstein curvature of Regge finite element metrics."""

__version__ = "0.1.0"
