"""Adversarial attacks on mouse-dynamics authentication."""

__version__ = "0.1.0"
