"""Exception hierarchy shared by all gbtopo modules."""


class GbtopoError(Exception):
    """Base class for all errors raised by this package."""


class NonFinite(GbtopoError):
    """An input contained NaN or Inf where finite values are required."""


class ParseError(GbtopoError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyCloud(GbtopoError):
    pass


class UnknownChannel(GbtopoError):
    pass


class KTooLarge(GbtopoError):
    pass


class KTooSmall(GbtopoError):
    pass


class DegenerateNeighborhood(GbtopoError):
    pass


class MissingInputNormals(GbtopoError):
    pass


class DegenerateChart(GbtopoError):
    pass


class NearSingular(GbtopoError):
    pass


class AllPointsFlagged(GbtopoError):
    pass


class Diverged(GbtopoError):
    """Self-optimization blew up; carries the trace recorded so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
