"""Exception hierarchy shared by every stage."""


class CascadeError(Exception):
    """Base class for all package errors."""


class TraceFormatError(CascadeError):
    """A trace, profile, cluster or plan file could not be parsed."""


class ShapeError(CascadeError):
    """Array shapes disagree with the declared task or with other records."""


class MissingModelError(CascadeError):
    """A record lacks the output of a model in the family."""


class InvariantError(CascadeError):
    """A value violates a documented invariant."""


class InfeasibleError(CascadeError):
    """No configuration satisfies the constraints."""
