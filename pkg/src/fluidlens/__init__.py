"""Fluid-lensing video simulation and distortion removal."""

__version__ = "0.1.0"
