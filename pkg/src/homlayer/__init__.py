"""Periodic homogenization with lower-order terms and layer potentials for the limit operator."""

__version__ = "0.1.0"
