"""Exception types shared across the package."""


class PolyBsdeError(Exception):
    """Base class for all package errors."""


class ParameterError(PolyBsdeError, ValueError):
    """Invalid model or run parameters."""


class DivergedSolve(PolyBsdeError, ArithmeticError):
    """A coefficient ODE produced a non-finite value or exceeded the magnitude cap.

    ``index`` is the offending state component; ``label`` carries the
    coefficient tag (for example ``(n, i, k)``) when the caller supplied one.
    """

    def __init__(self, index, label=None, t=None, value=None):
        self.index = index
        self.label = label
        self.t = t
        self.value = value
        tag = label if label is not None else index
        super().__init__(f"coefficient {tag} diverged at t={t} (value={value})")


class OutOfRangeOrder(PolyBsdeError, IndexError):
    pass


class OutOfGridTime(PolyBsdeError, ValueError):
    pass


class DomainError(PolyBsdeError, ValueError):
    pass


class RankDeficient(PolyBsdeError, ArithmeticError):
    pass


class InvalidCumulants(PolyBsdeError, ValueError):
    pass


class QuadratureNotConverged(PolyBsdeError, ArithmeticError):
    pass


class OutOfBounds(PolyBsdeError, ValueError):
    """Option price outside the no-arbitrage interval."""


class GridMismatch(PolyBsdeError, ValueError):
    pass


class EmptySample(PolyBsdeError, ValueError):
    pass
