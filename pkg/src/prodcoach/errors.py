"""Error hierarchy shared by every layer.

Each error carries a machine-readable ``code`` drawn from the closed set the
HTTP layer documents: validation, not_found, state, busy, upstream, storage.
"""


class CoachError(Exception):
    code = "internal"
    http_status = 500


class ValidationError(CoachError):
    code = "validation"
    http_status = 400


class NotFoundError(CoachError):
    code = "not_found"
    http_status = 404


class StateError(CoachError):
    """Operation not legal in the current lifecycle state (e.g. ended session)."""

    code = "state"
    http_status = 409


class BusyError(CoachError):
    """A message for this session is already in flight."""

    code = "busy"
    http_status = 409


class UpstreamError(CoachError):
    """Model backend failed after retries, or returned something unusable."""

    code = "upstream"
    http_status = 502

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ScriptError(UpstreamError):
    """Scripted gateway misconfiguration: missing or exhausted script entries."""


class ExtractionError(UpstreamError):
    """Model text contained no balanced JSON block."""


class JsonParseError(UpstreamError):
    """A JSON block was found but did not parse, even after the repair pass."""

    def __init__(self, message: str, block: str):
        super().__init__(message)
        self.block = block


class StorageError(CoachError):
    code = "storage"
    http_status = 500
