"""Reference gateway service for the provider wire protocol."""

__version__ = "0.1.0"
