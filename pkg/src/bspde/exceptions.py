"""Exception types raised across the package.

Every error carries a short machine-readable ``code`` so the command-line
front end can emit a stable error record.
"""


class BspdeError(Exception):
    code = "error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class InvalidArgument(BspdeError, ValueError):
    code = "invalid_argument"


class DegenerateRegression(BspdeError, ArithmeticError):
    code = "degenerate_regression"


class IterationFailure(BspdeError, RuntimeError):
    """Picard iteration did not reach its tolerance."""

    code = "iteration_failure"

    def __init__(self, message, residual, step=None, code=None):
        super().__init__(message, code=code)
        self.residual = residual
        self.step = step
