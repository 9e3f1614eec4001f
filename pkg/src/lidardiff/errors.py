"""Exception hierarchy shared by every module."""


class LidarDiffError(Exception):
    """Base class for all errors raised by lidardiff."""


class FormatError(LidarDiffError, ValueError):
    pass


class IoError(LidarDiffError, OSError):
    pass


class ShapeError(LidarDiffError, ValueError):
    pass


class ParamError(LidarDiffError, ValueError):
    pass


class EmptyInput(LidarDiffError, ValueError):
    pass


class InsufficientPoints(LidarDiffError, ValueError):
    pass


class InsufficientSamples(LidarDiffError, ValueError):
    pass


class DegeneratePoint(LidarDiffError, ValueError):
    pass


class KindMismatch(LidarDiffError, ValueError):
    pass


class UnknownSchedule(LidarDiffError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown schedule"


class StepError(LidarDiffError, IndexError):
    pass


class NumericalError(LidarDiffError, ArithmeticError):
    """Non-finite values appeared during training or sampling."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
