"""Poisoning-resilient linear regression with neighborhood-LID sample weights."""

__version__ = "0.1.0"
