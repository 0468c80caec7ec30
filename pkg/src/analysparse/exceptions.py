"""Exception types shared across the package."""


class ZeroOperatorError(ValueError):
    """Raised when an operation requires a nonzero matrix but received zeros."""


class DivergenceError(RuntimeError):
    """Raised when an iterative solver produced non-finite values or a
    training loss stopped being finite."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UnrollBudgetError(RuntimeError):
    """Raised when a recorded solve would exceed the tape node cap."""


class DatasetFormatError(ValueError):
    """Raised on a corrupt or truncated dataset file.

    Carries the byte offset at which parsing failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
