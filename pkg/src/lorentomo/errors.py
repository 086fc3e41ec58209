"""Exception hierarchy shared by all modules."""


class TomographyError(Exception):
    """Base class for every error raised by lorentomo."""


class DimensionMismatch(TomographyError, ValueError):
    pass


class RankTooSmall(TomographyError, ValueError):
    pass


class InvalidWeight(TomographyError, ValueError):
    pass


class InvalidArgs(TomographyError, ValueError):
    pass


class UnphysicalVector(TomographyError, ValueError):
    pass


class PureStateNoRestFrame(TomographyError, ValueError):
    pass


class UnsupportedDimension(TomographyError, ValueError):
    pass


class SingularState(TomographyError, ValueError):
    """The purification cannot be inverted; regularize the spectrum first."""


class ZeroRate(TomographyError, ValueError):
    pass


class ZeroSurvival(TomographyError, ArithmeticError):
    pass


class NoConvergence(TomographyError, ArithmeticError):
    pass


class RankDeficientData(TomographyError, ArithmeticError):
    """A row registered events although the model assigns it zero rate."""


class StepError(TomographyError):
    """Wraps an error raised inside the tracking loop with the step index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


class DivisionByZero(TomographyError, ZeroDivisionError):
    pass
