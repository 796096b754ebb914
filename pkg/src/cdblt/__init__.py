"""Class-difficulty based weighting and sampling for long-tailed classification."""

__version__ = "0.1.0"
