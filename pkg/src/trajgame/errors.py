"""Exception types raised across the package."""


class TrajGameError(Exception):
    """Base class for all package errors."""


class NonFiniteUtility(TrajGameError):
    pass


class NonDifferentiable(TrajGameError):
    pass


class InvalidAction(TrajGameError):
    pass


class Infeasible(TrajGameError):
    pass


class SolverError(TrajGameError):
    """A solve did not converge (status MaxIter) or produced unusable values."""


class SingularHessian(TrajGameError):
    pass


class SingularKKT(TrajGameError):
    pass


class NotIdentifiableHere(TrajGameError):
    pass


class NoContainingSubspace(TrajGameError):
    pass


class DataFormatError(TrajGameError):
    pass
