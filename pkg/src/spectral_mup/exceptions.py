"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """Raised when a caller breaks an operation's preconditions."""


class ConvergenceError(RuntimeError):
    """An iterative method stopped at its iteration cap without converging.

    Parameters
    ----------
    message : str
    iterations : int
        Iterations (or sweeps) performed before giving up.
    last_values : tuple of float
        The last iterates of the tracked quantity, most recent last.
    """

    def __init__(self, message, iterations, last_values=()):
        super().__init__(message)
        self.iterations = iterations
        self.last_values = tuple(last_values)
