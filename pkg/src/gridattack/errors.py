"""Exception types raised across the package."""

from __future__ import annotations


class CaseFormatError(ValueError):
    """A case file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NetworkValidationError(ValueError):
    """A network violates a structural invariant (islands, zero reactance, ...)."""


class ObservabilityError(RuntimeError):
    """The measurement set does not determine the requested states."""


class ConvergenceError(RuntimeError):
    """An iterative solve did not converge and the caller asked for an exception."""

    def __init__(self, message: str, stage: str = "", mismatch: float = float("nan")):
        self.stage = stage
        self.mismatch = mismatch
        super().__init__(f"[{stage}] {message}" if stage else message)
