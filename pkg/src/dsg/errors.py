"""Exception types shared across the engine.

Everything raised deliberately by this package derives from DsgError, so
callers can catch one base class at API boundaries.  Transport-level
failures get their own branch (BackendError) because the CLI maps them to
a distinct exit code.
"""

from __future__ import annotations


class DsgError(Exception):
    """Base class for all errors raised by this package."""


# ---------------------------------------------------------------------------
# Graph construction / lookup


class GraphError(DsgError):
    """Invalid graph structure."""


class CycleError(GraphError):
    """The dependency edges contain a directed cycle."""

    def __init__(self, cycle: list[int]):
        self.cycle = list(cycle)
        path = " -> ".join(str(i) for i in self.cycle + self.cycle[:1])
        super().__init__(f"dependency cycle: {path}")


class DanglingRefError(GraphError):
    """An edge or question references an id that does not exist."""


class DuplicateIdError(GraphError):
    """An id occurs more than once where uniqueness is required."""


class ArityError(GraphError):
    """Tuple arity or subcategory does not fit its category."""


class UnknownIdError(GraphError):
    """A lookup referenced an id absent from the graph."""


# ---------------------------------------------------------------------------
# Text parsing


class LineParseError(DsgError):
    """One annotation line could not be parsed."""

    def __init__(self, line_no: int, reason: str, raw: str = ""):
        self.line_no = line_no
        self.reason = reason
        self.raw = raw
        super().__init__(f"line {line_no}: {reason}")


class SelfLoopError(LineParseError):
    """A dependency line lists the child as its own parent."""


# ---------------------------------------------------------------------------
# Backends


class BackendError(DsgError):
    """Transport or protocol failure talking to a model backend."""


class Timeout(BackendError):
    """The backend did not respond in time (or was unreachable)."""


class HttpStatus(BackendError):
    """The backend answered with a non-200 status."""

    def __init__(self, status: int, detail: str = ""):
        self.status = status
        self.detail = detail
        msg = f"backend returned HTTP {status}"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)


class MalformedResponse(BackendError):
    """The backend answered 200 but the body does not match the protocol."""


# ---------------------------------------------------------------------------
# Generation pipeline


class StageParseError(DsgError):
    """A generation stage kept producing unparseable text."""

    def __init__(self, stage: str, attempts: list[str], last_error: Exception):
        self.stage = stage
        self.attempts = list(attempts)
        self.last_error = last_error
        super().__init__(
            f"stage {stage!r} failed to parse after {len(attempts)} attempt(s): {last_error}"
        )


class GraphInvalidError(DsgError):
    """The generated annotation does not assemble into a valid graph."""

    def __init__(self, cause: GraphError):
        self.cause = cause
        super().__init__(f"generated graph is invalid: {cause}")


# ---------------------------------------------------------------------------
# Statistics / data

class DegenerateInputError(DsgError):
    """Statistic undefined for this input (constant list, too few points)."""


class KeyMismatchError(DsgError):
    """Two keyed record sets do not line up."""

    def __init__(self, message: str, missing_left=(), missing_right=()):
        self.missing_left = list(missing_left)
        self.missing_right = list(missing_right)
        super().__init__(message)


class SchemaError(DsgError):
    """A data file violates its schema; carries per-row violations."""

    def __init__(self, path: str, violations: list[tuple[int, str]]):
        self.path = path
        self.violations = list(violations)
        head = "; ".join(f"row {row}: {msg}" for row, msg in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"{path}: {head}{more}")


class JudgeParseError(DsgError):
    """A judge backend's completion could not be interpreted."""


class ReportIntegrityError(DsgError):
    """A report cell does not match recomputation from raw records."""
