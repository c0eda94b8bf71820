"""Low-rank factorized multi-head attention text classification toolkit."""

__version__ = "0.1.0"
