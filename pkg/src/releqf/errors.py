"""Exception types raised by the estimation core."""


class ReleqfError(Exception):
    """Base class for all package errors."""


class NonSkewInput(ReleqfError, ValueError):
    """A matrix passed to ``vee`` is not skew-symmetric within tolerance."""


class NearPiSingularity(ReleqfError, ArithmeticError):
    """Rotation angle too close to pi for the principal logarithm."""


class DegenerateDirections(ReleqfError, ValueError):
    """Reference directions are collinear (or not unit length)."""


class LostPositivity(ReleqfError, ArithmeticError):
    """A Riccati or covariance matrix stopped being positive definite."""


class ConfigError(ReleqfError, ValueError):
    """Malformed or inconsistent configuration."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class LogFormatError(ReleqfError, ValueError):
    """Malformed sensor log; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
