# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Exceptions graformer can raise."""


class BaseGraformerException(Exception):
    """The base of all graformer exceptions."""
    pass


class GraformerException(BaseGraformerException):
    """An exception raised by a graformer function."""
    pass


class ShapeError(GraformerException):
    """Operands of a primitive or layer have incompatible shapes."""
    pass


class ContractError(GraformerException):
    """A precondition of an operation was violated."""
    pass


class DegenerateSpectrum(GraformerException):
    """A Laplacian has a zero maximum eigenvalue and can't be rescaled."""
    pass


class GraphError(GraformerException):
    """A skeleton graph definition is invalid."""
    pass


class DataError(GraformerException):
    """A dataset file or record couldn't be used."""
    pass


class SnapshotError(GraformerException):
    """A checkpoint container couldn't be read or doesn't fit the model."""
    pass


class ConfigError(GraformerException):
    """The configuration is invalid or inconsistent."""
    pass


class NumericalFailure(GraformerException):
    """Training produced a non-finite loss.

    The message names the optimizer step where it happened.

    """
    pass
