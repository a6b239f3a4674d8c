"""Exception types shared across the package."""


class EdgeworthLabError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(EdgeworthLabError, ValueError):
    """Dimensions of kernels, tables or laws do not line up."""


class InvalidSpecError(EdgeworthLabError, ValueError):
    """A chain or functional violates a hard invariant (row sums, positivity, ...)."""


class EllipticityError(EdgeworthLabError, ValueError):
    """A quantity that uniform ellipticity guarantees to be positive vanished."""


class UnsupportedInputError(EdgeworthLabError, ValueError):
    """The operation needs metadata the input does not carry (e.g. a lattice)."""


class DegenerateVarianceError(EdgeworthLabError, ValueError):
    """The variance is (numerically) zero, so nothing can be normalized."""


class OverflowGuardError(EdgeworthLabError, ArithmeticError):
    """A moment recursion exceeded the overflow guard."""


class RangeError(EdgeworthLabError, ValueError):
    """An index, window or integration range is outside its admissible set."""


class ConvergenceError(EdgeworthLabError, ArithmeticError):
    """An iterative or quadrature procedure failed its convergence gate."""


class OutOfDiskError(EdgeworthLabError, ValueError):
    """A complex parameter lies outside the validated analyticity disk."""


class ParameterError(EdgeworthLabError, ValueError):
    """Constructor parameters lie outside their admissible range."""


class BudgetError(EdgeworthLabError, ValueError):
    """A Monte Carlo budget cannot reach the requested resolution."""
