"""Learning open-system Lindblad models from measurement records."""

__version__ = "0.1.0"
