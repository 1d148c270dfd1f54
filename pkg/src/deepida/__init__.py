"""Deep integrative discriminant analysis for multi-view data."""

__version__ = "0.1.0"
