"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so keep the classes coarse.
"""


class WphistError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(WphistError, ValueError):
    pass


class ShapeError(WphistError, ValueError):
    pass


class DataError(WphistError, ValueError):
    """Input data is unusable (mismatched subjects, zero variance, non-finite)."""


class DecompositionError(WphistError, ArithmeticError):
    pass


class ContractViolation(WphistError, ValueError):
    pass


class NumericalFailure(WphistError, ArithmeticError):
    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class PersistenceError(WphistError, IOError):
    pass
