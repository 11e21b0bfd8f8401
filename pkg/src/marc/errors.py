"""Exception types shared across the package."""


class MarcError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MarcError):
    """Raised when an argument violates a documented precondition."""


class DegenerateClassifierError(MarcError):
    """Raised when a classifier row has zero norm, making margins undefined."""


class TrainingDivergedError(MarcError):
    """Raised when a training loss becomes non-finite or explodes."""

    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"training diverged at step {step} (loss={value!r})")


class FormatError(MarcError):
    """Raised on a malformed dump file; carries the byte offset of the fault."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class UndefinedCorrelationError(MarcError):
    """Raised when a rank correlation is requested on a constant vector."""
