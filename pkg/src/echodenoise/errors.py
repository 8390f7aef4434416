"""Exception types raised across the package."""


class EchoDenoiseError(Exception):
    """Base class for all package errors."""


class FormatError(EchoDenoiseError):
    """Malformed or truncated cloud/label/checkpoint file."""


class InvariantError(EchoDenoiseError, ValueError):
    """Data violates a structural invariant (e.g. echo ordering)."""


class ConfigError(EchoDenoiseError, ValueError):
    pass


class ShapeError(EchoDenoiseError, ValueError):
    pass


class DegenerateRange(EchoDenoiseError, ValueError):
    pass


class EmptySubset(EchoDenoiseError, ValueError):
    pass


class DivergenceError(EchoDenoiseError, RuntimeError):
    pass


class ModeError(EchoDenoiseError, ValueError):
    pass


class UndefinedMetric(EchoDenoiseError, ValueError):
    pass


class AlignmentError(EchoDenoiseError, ValueError):
    pass
