"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class PolyjurError(Exception):
    """Base class for all errors raised by this package."""


class InputError(PolyjurError):
    """Bad reference or malformed input outside of the Turtle grammar."""


class ParseError(PolyjurError):
    """Syntax error in a declaration document, with its location."""

    def __init__(self, message: str, source: str = "<string>", line: int = 0, column: int = 0):
        self.message = message
        self.source = source
        self.line = line
        self.column = column
        super().__init__(f"{source}:{line}:{column}: {message}")


class ManifestError(PolyjurError):
    pass


class DependencyError(PolyjurError):
    """Missing or cyclic framework dependency."""

    def __init__(self, message: str, cycle: list[str] | None = None):
        self.cycle = list(cycle or [])
        super().__init__(message)


class SkolemizationError(PolyjurError):
    def __init__(self, message: str, handles: list[str] | None = None):
        self.handles = list(handles or [])
        super().__init__(message)


class EnvironmentValidationError(PolyjurError):
    """The containment forest, joinability or scope declarations are invalid."""

    def __init__(self, diagnostics: list):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class ScopeVisibilityError(PolyjurError):
    pass


class ResolutionError(PolyjurError):
    """A framework's declarations cannot be turned into rules."""


class EvaluationError(PolyjurError):
    pass


class CacheError(PolyjurError):
    pass


class StaleCacheError(CacheError):
    pass


class NotFoundError(PolyjurError):
    pass
