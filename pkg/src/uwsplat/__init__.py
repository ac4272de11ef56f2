"""Omnidirectional Gaussian splatting with an underwater image-formation model."""

__version__ = "0.1.0"
