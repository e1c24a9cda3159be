"""Error handling for AuthGuard."""

# Import built-in modules
from enum import Enum
from enum import auto


class ErrorCode(Enum):
    """Error codes for AuthGuard."""

    UNKNOWN = auto()
    VALIDATION_ERROR = auto()
    EMPTY_INPUT = auto()
    SHAPE_ERROR = auto()
    CONFIG_ERROR = auto()
    NUMERICAL_ERROR = auto()
    NETWORK_ERROR = auto()
    API_FAILURE = auto()
    FILE_ERROR = auto()
    CHECKPOINT_ERROR = auto()
    SEQUENCE_OVERFLOW = auto()


class AuthGuardError(Exception):
    """Base exception class for AuthGuard."""

    def __init__(self, message: str, error_code: ErrorCode = ErrorCode.UNKNOWN):
        """Initialize AuthGuardError.

        Args:
            message: Error message
            error_code: Error code

        """
        super().__init__(message)
        self.error_code = error_code
