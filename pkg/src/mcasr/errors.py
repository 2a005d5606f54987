"""Shared exception types with their CLI exit codes."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown key. CLI exit code 2."""

    exit_code = 2


class DataError(OSError):
    """Dataset / checkpoint I/O problem. CLI exit code 3."""

    exit_code = 3


class InputError(ValueError):
    """Invalid runtime input (empty prefix, empty reference, ...). CLI exit code 2."""

    exit_code = 2


class TrainingError(RuntimeError):
    """Numeric failure during optimization. CLI exit code 4."""

    exit_code = 4
