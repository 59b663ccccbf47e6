class ConfigError(ValueError):
    """Invalid configuration or hyperparameter value."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or gradients)."""
