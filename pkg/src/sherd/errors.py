"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class SherdError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SherdError, ValueError):
    """Invalid parameters or configuration (CLI exit code 2)."""


class DataError(SherdError):
    """Problem with input data (CLI exit code 3)."""


class LoadError(DataError):
    """A dataset file is missing or unreadable."""


class SchemaError(DataError, ValueError):
    """Dataset files disagree with each other or with meta.json."""
