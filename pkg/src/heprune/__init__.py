"""Rotation-aware structured pruning for packed (SIMD) convolution."""

__version__ = "0.1.0"
