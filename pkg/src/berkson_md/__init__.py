"""Minimum-distance fitting and lack-of-fit testing under Berkson measurement error."""

__version__ = "1.0.0"
