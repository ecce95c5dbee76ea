"""Exception types raised across the package."""


class AelifLabError(ValueError):
    """Base class for all errors raised by aelif_lab."""


class ConfigError(AelifLabError):
    pass


class EmptyCorpus(AelifLabError):
    pass


class EmptyPrompt(AelifLabError):
    pass


class InvalidToken(AelifLabError):
    pass


class ShapeMismatch(AelifLabError):
    pass


class InvalidEdit(AelifLabError):
    pass


class PerturbationExhausted(AelifLabError):
    pass


class DegenerateFeature(AelifLabError):
    pass


class NotUnitNorm(AelifLabError):
    pass


class EmptyReport(AelifLabError):
    pass


class NumericFailure(ArithmeticError):
    """Training or sampling produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
