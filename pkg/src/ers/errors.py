"""Exception hierarchy shared by all registry components."""

from __future__ import annotations


class ErsError(Exception):
    """Base class for every error raised by this package."""


class InvalidUrn(ErsError):
    """An identifier does not follow the urn:ers:<path>:<local> scheme."""


class ParseError(ErsError):
    """Malformed serialized input. Carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CursorOutOfRange(ErsError):
    """A change-feed cursor points past the current store sequence."""


class NotConnected(ErsError):
    """Two nodes attempted to exchange data without an up link."""


class RoleViolation(ErsError):
    """An operation was invoked on a node whose role does not support it."""


class ScenarioInvalid(ErsError):
    """A simulation scenario failed validation. Message names the cause."""


class RegistryOpError(ErsError):
    """Base class for semantic failures of registry write operations."""


class EntityExists(RegistryOpError):
    pass


class EntityNotFound(RegistryOpError):
    pass


class PropertyNotFound(RegistryOpError):
    pass


class UniquenessViolation(RegistryOpError):
    pass


class ReservedPredicate(RegistryOpError):
    """A control or link predicate was used where only data predicates
    are allowed."""


class LinkExists(RegistryOpError):
    pass


class LinkNotFound(RegistryOpError):
    pass


class SemanticFailure(ErsError):
    """Wraps the registry error that aborted a transaction."""

    def __init__(self, cause: RegistryOpError):
        super().__init__(str(cause))
        self.cause = cause
