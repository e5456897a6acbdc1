"""Exception hierarchy. CLI exit codes are keyed off these classes."""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for every error raised by gradprompt."""

    exit_code = 1


class DataError(HarnessError):
    """Malformed, missing or unusable input data."""

    exit_code = 2

    def __init__(self, message: str, *, row: int | None = None, field: str | None = None):
        self.row = row
        self.field = field
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class PlanError(HarnessError):
    """A prompt plan violates one or more compatibility rules."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid prompt plan: " + "; ".join(self.violations))


class BackendError(HarnessError):
    exit_code = 3


class RetriesExhausted(BackendError):
    def __init__(self, attempts: int, last_error: str):
        self.attempts = attempts
        super().__init__(f"gave up after {attempts} attempts: {last_error}")


class AuthenticationError(BackendError):
    pass


class CacheMiss(BackendError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"replay cache miss for request {key}")


class MalformedResponse(BackendError):
    pass


class RunAborted(BackendError):
    """A run stopped early; records completed so far are kept in the result store."""

    def __init__(self, completed: int, total: int, cause: BaseException):
        self.completed = completed
        self.total = total
        self.cause = cause
        super().__init__(f"run aborted after {completed}/{total} examples (partial results kept): {cause}")
