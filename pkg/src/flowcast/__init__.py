"""Quality-of-result prediction for optimization-pass flows."""
__version__ = "0.1.0"
