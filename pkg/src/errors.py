"""
errors.py - Exception hierarchy for the fixity review engine.

Every error raised by the engine derives from FixityReviewError so callers
(the CLI in particular) can map failures to exit codes in one place.
"""

from __future__ import annotations


class FixityReviewError(Exception):
    """Base class for all engine errors."""


class ConfigError(FixityReviewError):
    """Invalid configuration file or override."""


# --- fixity -----------------------------------------------------------------

class FixityError(FixityReviewError):
    pass


class InvalidPath(FixityError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"Invalid path {path!r}: {reason}")
        self.path = path
        self.reason = reason


class DuplicatePath(FixityError):
    def __init__(self, path: str):
        super().__init__(f"Duplicate path after normalization: {path!r}")
        self.path = path


class UnsupportedFormat(FixityError):
    pass


class CorruptArchive(FixityError):
    pass


# --- repository -------------------------------------------------------------

class RepositoryError(FixityReviewError):
    pass


class FetchFailed(RepositoryError):
    """A download did not produce a complete body.

    Subclasses say why; ``attempt`` is the 1-based fetch index when the
    failure happened inside a multi-fetch probe.
    """

    def __init__(self, message: str, link: str | None = None, attempt: int | None = None):
        super().__init__(message)
        self.link = link
        self.attempt = attempt

    @property
    def kind(self) -> str:
        return type(self).__name__


class NotFound(FetchFailed):
    pass


class FetchTimeout(FetchFailed):
    pass


class TransportError(FetchFailed):
    pass


class TooLarge(FetchFailed):
    pass


class TooManyRedirects(FetchFailed):
    pass


# --- workflow ---------------------------------------------------------------

class WorkflowError(FixityReviewError):
    pass


class InvalidState(WorkflowError):
    def __init__(self, operation: str, state: str, allowed: tuple[str, ...] = ()):
        expected = f" (expected one of: {', '.join(allowed)})" if allowed else ""
        super().__init__(f"{operation} is not allowed in state {state}{expected}")
        self.operation = operation
        self.state = state
        self.allowed = allowed


class MissingDatasetRef(WorkflowError):
    pass


class InvalidDatasetRef(MissingDatasetRef, ValueError):
    """A landing URL or download link that is not an absolute URL."""


class NoPendingRevision(WorkflowError):
    pass


class ChainBroken(WorkflowError):
    def __init__(self, seq: int, reason: str):
        super().__init__(f"Event log chain broken at seq {seq}: {reason}")
        self.seq = seq
        self.reason = reason


class GapInSequence(WorkflowError):
    def __init__(self, seq: int, found: int | None = None):
        detail = f", found {found}" if found is not None else ""
        super().__init__(f"Event log is missing seq {seq}{detail}")
        self.seq = seq
        self.found = found


class CaseLocked(WorkflowError):
    pass


class NotParticipant(WorkflowError):
    """An actor acted in a role they do not hold in the case."""


class UnknownCase(WorkflowError):
    pass


# --- detection --------------------------------------------------------------

class DetectionError(FixityReviewError):
    pass


class InconsistentContext(DetectionError):
    pass


class UnknownReporter(DetectionError):
    pass


class CategoryNotPolicyOnly(DetectionError):
    pass


class NotEditor(DetectionError):
    pass


class AlreadyResolved(DetectionError):
    pass


class FindingNotOpen(DetectionError):
    pass


class UnknownFinding(DetectionError):
    pass


# --- report -----------------------------------------------------------------

class ReportError(FixityReviewError):
    pass


class SchemaInvalid(ReportError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class MissingAcceptanceRecord(ReportError):
    pass


# --- cli --------------------------------------------------------------------

class ScenarioError(FixityReviewError):
    """Scenario script does not parse or references undeclared names."""
