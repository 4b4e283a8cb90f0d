"""Robust signed-graph link sign prediction with joint input/target denoising."""

__version__ = "0.1.0"
