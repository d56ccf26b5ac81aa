"""Exception types raised across the engine."""

from __future__ import annotations


class DPTSError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(DPTSError, ValueError):
    pass


class InvalidConfig(DPTSError, ValueError):
    pass


class NotFound(DPTSError, LookupError):
    pass


class EmptyBatch(DPTSError):
    pass


class ProtocolViolation(DPTSError):
    """A batch or backend response broke the engine/backend wire contract."""


class LimitExceeded(DPTSError):
    pass


class BackendUnavailable(DPTSError):
    """Transport failure that survived every configured retry."""


class BackendError(DPTSError):
    """The backend answered with a well-formed error response."""

    def __init__(self, status: int, message: str = "") -> None:
        super().__init__(f"backend returned HTTP {status}: {message}")
        self.status = status
        self.message = message


class EmptyTrace(DPTSError):
    pass


class NoBestPath(DPTSError):
    pass


class IoError(DPTSError, OSError):
    pass
