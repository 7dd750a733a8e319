"""Acoustic event detection and 3D localization on audio-visual point clouds."""

__version__ = "0.1.0"
