"""Continual detection of synthetic images with an ensemble of expert embedders."""

__version__ = "0.1.0"
