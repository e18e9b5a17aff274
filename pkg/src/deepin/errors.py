"""Exception hierarchy shared by every deepin module."""


class DeepInError(Exception):
    """Base class for all deepin errors."""


class ContractViolation(DeepInError, ValueError):
    """An input violated a documented precondition."""


class NumericalFailure(DeepInError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class TrainingDiverged(NumericalFailure):
    """Training produced a non-finite or exploding objective.

    The history up to the last finite epoch is kept on ``history`` so callers
    can inspect where things went wrong.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class TuningFailed(NumericalFailure):
    """Every candidate in a tuning pass diverged."""

    def __init__(self, message, cells=()):
        super().__init__(message)
        self.cells = list(cells)


class FormatError(DeepInError, ValueError):
    """A model, config or dataset document could not be parsed."""
