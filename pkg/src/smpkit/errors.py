"""Exception hierarchy shared across the engine.

Every error raised on purpose by this package derives from EngineError so
callers (and the CLI exit-code mapping) can distinguish engine rejections
from genuine bugs.
"""


class EngineError(Exception):
    """Base class for all errors raised by smpkit."""


class DomainError(EngineError):
    """A value lies outside an operation's mathematical domain."""


class ValidationError(EngineError):
    """Structurally invalid input: bad shapes, orderings, or file content."""


class InsufficientDataError(DomainError):
    """Not enough overlapping observations to compute a statistic."""
