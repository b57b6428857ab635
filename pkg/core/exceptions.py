"""
Error taxonomy shared by every Enoki module.

Each public operation maps its failures into exactly one kind. Errors cross
process boundaries as ``{"kind": ..., "detail": ...}``.
"""


class EnokiError(Exception):
    """Base exception for all Enoki errors."""

    kind = 'Internal'

    def __init__(self, detail: str = ''):
        super().__init__(detail)
        self.detail = detail

    def __str__(self):
        return f"{self.kind}: {self.detail}" if self.detail else self.kind

    def to_wire(self) -> dict:
        return {'kind': self.kind, 'detail': self.detail}

    @staticmethod
    def from_wire(data: dict) -> 'EnokiError':
        """Rebuild the matching subclass from its wire form."""
        kind = (data or {}).get('kind', 'Internal')
        error_class = ERROR_KINDS.get(kind, InternalError)
        return error_class(str((data or {}).get('detail', '')))


class NotFoundError(EnokiError):
    """Raised when a keygroup, key, node or function does not exist."""
    kind = 'NotFound'


class AlreadyExistsError(EnokiError):
    """Raised when creating something that is already present."""
    kind = 'AlreadyExists'


class ConflictError(EnokiError):
    """Raised when a request contradicts existing state."""
    kind = 'Conflict'


class UnavailableError(EnokiError):
    """Raised when a peer, the naming service or a queue cannot take the request."""
    kind = 'Unavailable'


class OperationTimeoutError(EnokiError):
    """Raised when an operation cannot complete within its deadline."""
    kind = 'Timeout'


class BadRequestError(EnokiError):
    """Raised for malformed input."""
    kind = 'BadRequest'


class InternalError(EnokiError):
    """Raised when a handler or the platform itself fails."""
    kind = 'Internal'


ERROR_KINDS = {
    error_class.kind: error_class
    for error_class in (
        NotFoundError,
        AlreadyExistsError,
        ConflictError,
        UnavailableError,
        OperationTimeoutError,
        BadRequestError,
        InternalError,
    )
}
