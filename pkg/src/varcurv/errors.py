"""Exception types shared across the toolkit."""


class ParameterError(ValueError):
    """Invalid argument, configuration value or dimension mismatch."""


class NumericError(ArithmeticError):
    """Non-finite value encountered during a computation.

    ``iteration`` is set when the failure happened inside an iterative run.
    """

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class StabilityError(ParameterError):
    """Step size outside the stable range; ``report`` carries the diagnosis."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConvergenceError(ArithmeticError):
    """A solver finished but its residual check did not pass."""
