"""Exception types shared across the package."""


class ConfigError(Exception):
    """Inconsistent shapes, parameters, or network configuration."""


class DataError(Exception):
    """Malformed input files: weight blobs, adapter files, datasets, reports."""
