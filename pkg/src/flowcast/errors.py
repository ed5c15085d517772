"""Exception types raised across flowcast."""


class FlowcastError(Exception):
    """Base class for all flowcast errors."""


class CapExceeded(FlowcastError):
    pass


class CountExceedsSpace(FlowcastError):
    pass


class UnknownTransformation(FlowcastError):
    pass


class RepetitionMismatch(FlowcastError):
    pass


class MalformedMatrix(FlowcastError):
    pass


class SpecMismatch(FlowcastError):
    pass


class DegenerateLabels(FlowcastError):
    pass


class EmptySplit(FlowcastError):
    pass


class MissingHeader(FlowcastError):
    pass


class DegenerateBatch(FlowcastError):
    pass


class ShapeMismatch(FlowcastError):
    pass


class EmptyInput(FlowcastError):
    pass


class InsufficientPoints(FlowcastError):
    pass


class NonPositiveTruth(FlowcastError):
    pass


class CorruptFile(FlowcastError):
    pass


class VersionMismatch(FlowcastError):
    pass
