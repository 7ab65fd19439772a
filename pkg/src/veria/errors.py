"""Common exception base for pipeline errors."""


class VeriaError(Exception):
    """Base class for all pipeline-specific errors."""


class ConfigError(VeriaError):
    """Run configuration is invalid or inconsistent."""
