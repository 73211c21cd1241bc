class GaussRepError(Exception):
    """Base class for library errors."""


class InvalidInputError(GaussRepError, ValueError):
    """Input violates a documented precondition."""


class DegenerateCovarianceError(GaussRepError, ValueError):
    """A point set has zero spread and cannot define a covariance."""


class DivergenceError(GaussRepError, ArithmeticError):
    """An iterative procedure produced non-finite or runaway values."""
