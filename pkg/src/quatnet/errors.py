"""Exception hierarchy.

Each class carries the CLI exit code it maps to: 1 for usage/config
problems, 2 for data problems, 3 for numerical failures.
"""


class QuatnetError(Exception):
    exit_code = 2


class UsageError(QuatnetError):
    exit_code = 1


class InvalidConfig(UsageError, ValueError):
    pass


class DataError(QuatnetError):
    exit_code = 2


class ShapeMismatch(DataError, ValueError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class EmptyDataset(DimensionMismatch):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class BadCheckpoint(DataError):
    pass


class AudioTooShort(DataError, ValueError):
    pass


class KernelLargerThanInput(ShapeMismatch):
    pass


class ImpossibleTarget(DataError, ValueError):
    pass


class TooLarge(QuatnetError, ValueError):
    pass


class InvalidFan(QuatnetError, ValueError):
    pass


class InvalidRate(QuatnetError, ValueError):
    pass


class NumericalError(QuatnetError):
    exit_code = 3


class ZeroNormError(NumericalError, ZeroDivisionError):
    pass


class NonScalarLoss(NumericalError, ValueError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index
