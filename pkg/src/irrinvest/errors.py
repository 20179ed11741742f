"""Exception hierarchy shared by the solvers and the CLI."""


class IrrInvestError(Exception):
    """Base class for every error raised by this package."""


class DomainError(IrrInvestError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class DegenerateVolatilityError(DomainError):
    """A closed form was requested with zero volatility."""


class NonIntegrableMarginalError(DomainError):
    """The transformed marginal-revenue integrand does not decay."""


class SolverError(IrrInvestError):
    """A root finder could not bracket or converge."""

    def __init__(self, message, knot=None, bracket=None):
        super().__init__(message)
        self.knot = knot
        self.bracket = bracket


class NumericalError(IrrInvestError):
    """A Monte Carlo or quadrature estimate came out non-finite."""


class CoverageError(IrrInvestError):
    """The capacity grid of the stopping oracle is too narrow."""


class ExtractionError(IrrInvestError):
    """No stopping node was found in a value-surface slice."""


class ConfigError(IrrInvestError, ValueError):
    """A configuration field failed validation.

    ``field`` holds the dotted path of the offending key.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
