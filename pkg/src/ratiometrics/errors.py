"""Exception hierarchy."""


class RatioMetricsError(ValueError):
    """Base class for all package errors."""


class EmptyDataError(RatioMetricsError):
    pass


class InvalidDataError(RatioMetricsError):
    pass


class CorrelationUnidentifiable(RatioMetricsError):
    """Every user has a single observation, so within-user spread is unobservable."""


class WeightDomainError(RatioMetricsError):
    pass


class DataFormatError(RatioMetricsError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
