"""Spectral gaps, avoided crossings and annealing dynamics for transverse-field spin models."""

__version__ = "0.1.0"
