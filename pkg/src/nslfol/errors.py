"""Shared exception types.

Everything raised on purpose derives from NslfError so callers (and the CLI
exit-code mapping) can distinguish our failures from genuine bugs.
"""


class NslfError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(NslfError, ValueError):
    """Array shapes disagree with a declared contract."""


class DomainError(NslfError, ValueError):
    """A value lies outside the domain an operation is defined on."""


class RoutingError(NslfError, ValueError):
    """A point cannot be routed to any region of the configured grid."""


class StateError(NslfError, RuntimeError):
    """An operation was called in a runtime mode that forbids it."""


class DataFormatError(NslfError, ValueError):
    """An on-disk artifact (sequence, mesh, checkpoint) failed to parse."""


class NonFiniteGradientError(NslfError, FloatingPointError):
    """An optimizer step received NaN or infinite gradients."""
