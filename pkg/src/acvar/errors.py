"""Exception hierarchy shared by every module."""


class AcvarError(Exception):
    """Base class for all errors raised by :mod:`acvar`."""


class InvalidParameterError(AcvarError, ValueError):
    """A scalar parameter or dimension is outside its admissible range."""


class InvalidKernelError(InvalidParameterError):
    """A transition row is not a probability vector."""


class ConvergenceError(AcvarError, RuntimeError):
    """An iterative solver hit its sweep cap without meeting its tolerance."""


class SpectralError(ConvergenceError):
    """Power iteration for the Perron pair failed to converge."""


class NoAcceptanceError(AcvarError, RuntimeError):
    """The rejection oracle accepted zero paths."""


class UnattainableThresholdError(AcvarError, ValueError):
    """The threshold is at or beyond the largest achievable long-run average."""


class NumericalError(AcvarError, FloatingPointError):
    """Base for numerical breakdowns inside an iteration.

    ``iteration`` is filled in by the stochastic-approximation loop so the
    caller knows where the run died.
    """

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration

    def __str__(self) -> str:
        msg = super().__str__()
        if self.iteration is not None:
            msg = f"{msg} (at iteration {self.iteration})"
        return msg


class TiltOverflowError(NumericalError):
    """exp(zeta * g) left the representable range; rescale the rewards."""


class LikelihoodRatioError(NumericalError):
    """A realized transition had tilted probability below the floor."""


class InvalidStateError(NumericalError):
    """The SA state became unusable (e.g. an all-zero tilted row)."""
