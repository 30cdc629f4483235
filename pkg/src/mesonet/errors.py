"""Exception hierarchy shared by every module."""


class MesoError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MesoError, ValueError):
    pass


class NumericError(MesoError, ArithmeticError):
    pass


class ConfigError(MesoError, ValueError):
    pass


class UsageError(MesoError):
    """An operation was called in a mode it does not support."""


class DegenerateBatchError(MesoError, ValueError):
    pass


class DataError(MesoError):
    pass


class FormatError(DataError):
    """Bytes on disk do not follow the expected layout."""


class CorruptionError(FormatError):
    pass


class IncompleteModelError(FormatError):
    pass


class DegenerateLandmarkError(MesoError, ValueError):
    pass


class IncompatibleArchitectureError(MesoError):
    pass


class TransferSourceError(MesoError):
    pass


class UndefinedCurveError(MesoError, ValueError):
    pass
