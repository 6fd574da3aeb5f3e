"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent option combination."""


class DataError(ValueError):
    """Malformed dataset file or record that fails schema validation."""


class TrainingDiverged(RuntimeError):
    """Raised when a loss becomes non-finite; carries the diagnostic dump path."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
