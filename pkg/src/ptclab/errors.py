"""Error taxonomy shared by all modules."""


class ConfigurationError(ValueError):
    """A config value or shape combination that can never work."""


class UsageError(ValueError):
    """An API call that violates a precondition at runtime."""


class TrainAbort(RuntimeError):
    """Training stopped on a non-finite loss; carries the snapshot path."""

    def __init__(self, message, snapshot_path=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
