"""Exception types shared across the package."""


class AirHockeyError(Exception):
    """Base class for all package errors."""


class ConfigError(AirHockeyError):
    """Malformed configuration file. ``line`` is 1-based, or None if not line-specific."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:" + (f"{line}:" if line is not None else "")
        elif line is not None:
            where = f"line {line}:"
        super().__init__(f"{where} {message}" if where else message)


class SingularConfiguration(AirHockeyError):
    """Jacobian lost rank (smallest singular value below tolerance)."""


class EmptyRegion(AirHockeyError):
    pass


class DegenerateGeometry(AirHockeyError):
    pass


class OutOfBounds(AirHockeyError):
    pass


class InvalidBoundary(AirHockeyError):
    pass


class OutOfRange(AirHockeyError):
    pass


class Infeasible(AirHockeyError):
    """The box-constrained null-space QP has an empty feasible set."""


class Unreachable(AirHockeyError):
    pass


class NonMonotonicTime(AirHockeyError):
    pass


class IllConditioned(AirHockeyError):
    pass
