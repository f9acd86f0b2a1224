"""Path-guided unit test generation for focal functions."""

__version__ = "0.1.0"
