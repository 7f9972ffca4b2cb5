class DhmmError(Exception):
    """Base class for all package errors."""


class ParameterError(DhmmError, ValueError):
    pass


class TopologyError(DhmmError):
    pass


class ModelValidationError(DhmmError, ValueError):
    pass


class NumericError(DhmmError, ArithmeticError):
    pass


class AssumptionError(DhmmError, ValueError):
    """A hypothesis of a stability result does not hold for the given constants."""


class AssumptionWarning(UserWarning):
    pass
