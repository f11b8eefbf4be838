"""Rig-aware structure-from-motion and splat projection for static fisheye rigs."""

__version__ = "0.1.0"
