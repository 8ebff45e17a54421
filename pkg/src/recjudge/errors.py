"""Exception hierarchy shared by all recjudge modules."""


class RecJudgeError(Exception):
    """Base class for all errors raised by recjudge."""


class FormatError(RecJudgeError):
    """A file does not have the expected columns or layout."""


class ValidationError(RecJudgeError, ValueError):
    """Input values violate a documented constraint."""

    def __init__(self, message, *, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NoPairsError(ValidationError):
    """No item pairs qualified for an agreement computation."""


class SchemaError(RecJudgeError):
    """A judge verdict lacks a field required by the requested operation."""


class BackendError(RecJudgeError):
    """A judge backend could not produce a response."""

    #: transient errors are retried, everything else fails immediately
    transient = False


class TransientBackendError(BackendError):
    transient = True
