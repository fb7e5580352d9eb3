"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class ConfigError(ValueError):
    """Invalid configuration value. ``key`` names the offending setting when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ContractError(RuntimeError):
    """An API precondition was violated (e.g. backward called twice)."""


class TrainingAborted(RuntimeError):
    """Raised when a training iteration produces a non-finite loss."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
