"""Exception types shared across the package."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class DegenerateQualityError(InvalidInputError):
    """Quality vector is constant; congestion/temperature fits are undefined."""


class NonConvergedError(RuntimeError):
    """A fixed-point solve ran out of iterations.

    Carries the best iterate seen so far, its residual, and the iteration
    count, so callers can inspect or retry with looser settings.
    """

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class PipelineFailedError(RuntimeError):
    """Every checkpoint of a series analysis failed."""


class TraceFormatError(ValueError):
    """A trace file does not conform to the MOER format.

    ``field`` names the offending header field or payload section and
    ``offset`` is the byte offset at which the problem was detected.
    """

    def __init__(self, message, field, offset):
        super().__init__(f"{message} (field={field!r}, byte offset={offset})")
        self.field = field
        self.offset = offset


class BadMagicError(TraceFormatError):
    """File does not start with the MOER magic bytes."""


class VersionMismatchError(TraceFormatError):
    """File declares an unsupported format version."""


class TruncatedPayloadError(TraceFormatError):
    """File ends before the declared header or payload is complete."""


class FieldConsistencyError(TraceFormatError):
    """A header field is out of range or inconsistent with the others."""
