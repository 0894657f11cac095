"""Exception hierarchy shared by every pvqe module."""


class PVQEError(Exception):
    """Base class for all library errors."""


class InvalidConfigError(PVQEError, ValueError):
    pass


class InvalidInputError(PVQEError, ValueError):
    pass


class InvalidStateError(PVQEError, RuntimeError):
    pass


class CorruptFileError(PVQEError, IOError):
    pass


class UnsupportedVersionError(PVQEError, IOError):
    pass


class UnsupportedFormatError(PVQEError, ValueError):
    pass


class UndefinedMetricError(PVQEError, ValueError):
    pass


class TrainingDivergedError(PVQEError, FloatingPointError):
    pass
