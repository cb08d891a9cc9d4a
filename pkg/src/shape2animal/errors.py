"""Exception hierarchy shared by all pipeline stages."""


class Shape2AnimalError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatchError(Shape2AnimalError):
    """Operands with incompatible pixel dimensions."""


class DegenerateInputError(Shape2AnimalError):
    """Input that makes the operation meaningless (e.g. two empty masks)."""


class NumericError(Shape2AnimalError):
    """Non-finite values where finite ones are required."""


class ConfigError(Shape2AnimalError):
    """Invalid configuration value or unknown backend id."""


class ValidationError(Shape2AnimalError):
    """Malformed evaluation inputs (manifest rows, study responses)."""


class NoDetectionError(Shape2AnimalError):
    """The detector returned no usable box; recoverable per-image skip."""


class EmptyMaskError(Shape2AnimalError):
    """The segmenter produced a mask with no foreground pixels."""


class MaskCoherenceError(Shape2AnimalError):
    """Segmenter output inconsistent with the detection box that prompted it."""


class ConceptParseError(Shape2AnimalError):
    """Interpreter response could not be parsed into the two-field schema."""

    def __init__(self, message, raw_response=None):
        super().__init__(message)
        self.raw_response = raw_response


class BackendError(Shape2AnimalError):
    """External backend failure, carrying retry metadata."""

    def __init__(self, message, backend_id=None, attempts=1):
        super().__init__(message)
        self.backend_id = backend_id
        self.attempts = attempts


class BackendTimeoutError(BackendError):
    """Retryable: the backend timed out."""


class BackendRateLimitError(BackendError):
    """Retryable: the backend throttled the call."""


class BackendTransientError(BackendError):
    """Retryable: a transient backend fault (connection reset, 5xx, ...)."""


class BackendUnavailableError(BackendError):
    """Non-retryable: missing dependency, model weights, or credential."""


#: Error classes that with_retries() will retry by default.
RETRYABLE_ERRORS = (BackendTimeoutError, BackendRateLimitError, BackendTransientError)
