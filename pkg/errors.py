"""
Exception hierarchy shared by every module.

The CLI maps these to exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class BatchEnsembleError(Exception):
    """Base class for all errors raised by this project"""


class ShapeError(BatchEnsembleError, ValueError):
    """Array dimensions do not agree"""


class ContractError(BatchEnsembleError, ValueError):
    """A documented precondition was violated by the caller"""


class ParameterError(BatchEnsembleError, ValueError):
    """A numeric parameter is outside its valid range"""


class OrthogonalityError(ParameterError):
    """Orthonormal adapter rows requested for more members than the layer width"""


class ConfigError(BatchEnsembleError, ValueError):
    """Invalid model, training or experiment configuration"""


class DataError(BatchEnsembleError, ValueError):
    """Malformed or insufficient input data"""


class NumericalError(BatchEnsembleError, ArithmeticError):
    """A loss or prediction became NaN or infinite"""


class StateError(BatchEnsembleError, RuntimeError):
    """Operation called on an object in the wrong lifecycle state"""
