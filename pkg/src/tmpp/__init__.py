"""Purchase prediction from user behavior logs."""

__version__ = "0.1.0"
