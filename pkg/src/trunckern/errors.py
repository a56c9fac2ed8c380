"""Exception hierarchy shared by the library and the command line."""


class TrunckernError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TrunckernError, ValueError):
    """Invalid parameters or experiment configuration (CLI exit code 2)."""


class NumericalError(TrunckernError, ArithmeticError):
    """A computation produced non-finite values or failed to converge (exit code 3)."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach its tolerance.

    Attributes
    ----------
    estimates : tuple of float
        The last estimates that were compared.
    """

    def __init__(self, message, estimates=()):
        super().__init__(message)
        self.estimates = tuple(estimates)


class HypothesisViolation(TrunckernError, ValueError):
    """Input data violates a hypothesis a measurement relies on (e.g. negativity)."""
