"""Exception hierarchy for osgoodlab."""


class OsgoodLabError(Exception):
    """Base class for all package errors."""


class ConstructionError(OsgoodLabError, ValueError):
    """Invalid data handed to a constructor (non-monotone f, bad coefficients, ...)."""


class OsgoodHolds(OsgoodLabError):
    """The Osgood integral diverges, so the zero solution is unique and no
    nontrivial solution can be built."""


class InconclusiveOsgood(OsgoodLabError):
    """The Osgood probe could neither certify convergence nor divergence."""


class HorizonExceeded(OsgoodLabError, ValueError):
    """Requested times reach beyond the interval on which mu stays below the cap."""


class KappaNotPositive(OsgoodLabError):
    """The Dirichlet lower bound came out non-positive on the current grid."""


class MonotonicityViolation(OsgoodLabError):
    """A monotone iteration broke its ordering by more than the chain tolerance."""


class NonConvergence(OsgoodLabError):
    """Fixed-point iteration hit its iteration cap."""
