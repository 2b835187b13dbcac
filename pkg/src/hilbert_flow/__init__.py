"""Particle-based Bayesian inference with functional sharpness-aware updates."""

__version__ = "0.1.0"
