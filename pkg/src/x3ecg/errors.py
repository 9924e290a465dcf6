"""Exception types shared across the package."""


class X3ECGError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class ParameterError(X3ECGError, ValueError):
    pass


class LengthError(X3ECGError, ValueError):
    pass


class ShapeError(X3ECGError, ValueError):
    pass


class LeadNameError(X3ECGError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class FormatError(X3ECGError, ValueError):
    """Malformed manifest or signal file."""


class UnsupportedRateError(FormatError):
    pass


class DivergenceError(X3ECGError, RuntimeError):
    pass
