"""Exception hierarchy shared across the package."""


class GeoactError(Exception):
    """Base class for all geoact errors."""


class EmptyTrajectory(GeoactError):
    """A trajectory operation received no points."""


class DuplicateTimestamp(GeoactError):
    """Two fixes of the same user share a timestamp."""


class TooShort(GeoactError):
    """A trajectory does not span enough time or points for the operation."""


class RateTooHigh(GeoactError):
    """Requested Poisson rate implies a Bernoulli keep probability above 1."""


class InvalidRate(GeoactError):
    """Poisson rate or keep probability is not positive."""


class ParseError(GeoactError):
    """A CSV row could not be parsed. Carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NoTrainingData(GeoactError):
    """The look-back window contains no measurements."""


class IllConditioned(GeoactError):
    """Cholesky factorization failed even after the jitter ladder."""


class DegenerateMean(GeoactError):
    """Linear mean function requested through two points with equal times."""


class InvalidPayoff(GeoactError):
    """Payoff matrix violates delta + alpha - beta < 0."""


class ConfigError(GeoactError):
    """A run configuration value is missing or malformed."""
