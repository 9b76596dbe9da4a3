"""Stability analysis for parametric semilinear parabolic optimal control."""

__version__ = "0.1.0"
