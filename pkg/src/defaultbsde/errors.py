class NumericalError(RuntimeError):
    """A simulation or solve produced non-finite values or failed to converge."""


class ConfigError(ValueError):
    """A run configuration failed validation."""
