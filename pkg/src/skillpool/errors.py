"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data or configuration violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite intermediate.

    ``location`` carries the parameter vector (or other input) at which the
    failure occurred so callers can report or reproduce it.
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class DivergenceError(NumericalError):
    """Hamiltonian integration left the region of finite density."""


class NonConvergenceError(RuntimeError):
    """An iterative procedure or sampler failed to converge."""
