"""Exception types raised across the package."""


class CocoError(Exception):
    """Base class for all package errors."""


class ParseError(CocoError):
    pass


class SplitError(CocoError):
    pass


class SampleError(CocoError):
    pass


class ShapeError(CocoError):
    pass


class DomainError(CocoError):
    """Input outside an operation's mathematical domain (log of <= 0, NaN, ...)."""


class OptimError(CocoError):
    pass


class FitError(CocoError):
    pass


class StateError(CocoError):
    pass


class BatchError(CocoError):
    pass


class ConfigError(CocoError):
    pass


class TrainDiverged(CocoError):
    def __init__(self, step, message="non-finite loss"):
        super().__init__(f"{message} at step {step}")
        self.step = step
