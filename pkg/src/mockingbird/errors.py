"""Exception hierarchy shared across the package.

Every error raised on purpose derives from :class:`MockingbirdError`, which the
CLI maps to exit codes.
"""


class MockingbirdError(ValueError):
    pass


# trace_model
class EmptyTrace(MockingbirdError):
    pass


class StartsIncoming(MockingbirdError):
    pass


class NonIntegerBurst(MockingbirdError):
    pass


class ZeroSizeOriginal(MockingbirdError):
    pass


class ShrunkBurst(MockingbirdError):
    pass


# dataset_io
class ClassTooSmall(MockingbirdError):
    pass


class ParseError(MockingbirdError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelOutOfRange(MockingbirdError):
    pass


# detector
class SingleClassDataset(MockingbirdError):
    pass


class DimensionMismatch(MockingbirdError):
    pass


class UnknownClass(MockingbirdError):
    pass


class BadK(MockingbirdError):
    pass


class ModelFormatError(MockingbirdError):
    pass


# generators
class InsufficientPool(MockingbirdError):
    pass


class AllTargetsDegenerate(MockingbirdError):
    pass


class ZeroDistance(MockingbirdError):
    pass


# evaluation
class LabelMismatch(MockingbirdError):
    pass


class MixedLabels(MockingbirdError):
    pass


# burst molding
class TargetSmallerThanReal(MockingbirdError):
    pass


class UnorderedEvents(MockingbirdError):
    pass


class ConfigError(MockingbirdError):
    pass
