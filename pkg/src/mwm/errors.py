"""Exception hierarchy shared by the library and the command line."""


class MWMError(Exception):
    """Base class for every error raised by :mod:`mwm`."""

    exit_code = 1


class ConfigError(MWMError, ValueError):
    """Invalid machine configuration or options."""

    exit_code = 2


class NumericalError(MWMError, ArithmeticError):
    """A numerical routine could not produce a trustworthy value."""

    exit_code = 3


class DegenerateError(NumericalError):
    """Two combinations (or two recursion coordinates) are perfectly correlated.

    ``indices`` names the offending pair in the caller's indexing.
    """

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices


class InfeasibleError(MWMError):
    """No feasible starting point (or solution) could be found."""

    exit_code = 4
