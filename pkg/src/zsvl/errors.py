"""Exception types shared across the toolkit."""


class ZsvlError(Exception):
    """Base class for all toolkit errors."""


class InputError(ZsvlError, ValueError):
    """Bad user-supplied data: unreadable images, malformed records, empty text."""


class ContractError(ZsvlError, ValueError):
    """A caller broke an operation's precondition (shape mismatch, NaN scores, ...)."""


class BackendError(ZsvlError, RuntimeError):
    """A model backend failed while producing an output."""

    def __init__(self, message: str, sample_id: str | None = None):
        if sample_id is not None:
            message = f"[{sample_id}] {message}"
        super().__init__(message)
        self.sample_id = sample_id
