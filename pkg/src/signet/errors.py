"""Exception taxonomy shared across the engine.

The service maps these onto HTTP status codes and the CLI onto exit codes:
input-side problems (config, data, format, usage) are client errors,
everything else is a runtime failure.
"""


class SignetError(Exception):
    """Base class for all engine errors."""


class ShapeError(SignetError):
    """Tensor dimensions incompatible with an operation's contract."""


class NumericError(SignetError):
    """Non-finite values where finite ones are required."""


class ConfigError(SignetError):
    """Invalid configuration or unusable invocation parameters."""


class DataError(SignetError):
    """Problem with dataset contents (missing, malformed, out of range)."""


class FormatError(SignetError):
    """Malformed weight bundle or other serialized artifact."""


class StateError(SignetError):
    """Operation invoked on an object in the wrong state."""


class ProtocolError(SignetError):
    """Malformed frame-stream input."""


# Errors caused by what the caller handed in, as opposed to failures that
# occur while computing. Drives the HTTP 4xx/5xx and exit-code 2/1 split.
INPUT_ERRORS = (ConfigError, DataError, FormatError, ProtocolError)
