"""Exception hierarchy.

Every error raised by the library derives from :class:`LADCError`.  The three
middle classes map onto the CLI exit codes (2 config, 3 data, 4 numerical).
"""


class LADCError(Exception):
    exit_code = 1


class ConfigError(LADCError):
    exit_code = 2


class DataError(LADCError):
    exit_code = 3


class NumericalError(LADCError):
    exit_code = 4


# data
class MalformedHeader(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyClass(DataError):
    pass


class LengthMismatch(DataError):
    pass


class ZeroCount(DataError):
    pass


class MissingCalibration(DataError):
    pass


class MissingCovariance(DataError):
    pass


class InsufficientHeadClasses(DataError):
    pass


# numerical
class InvalidCovariance(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class PipelineError(LADCError):
    """Wraps an error raised inside one pipeline phase."""

    def __init__(self, phase: str, cause: LADCError):
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
        self.phase = phase
        self.cause = cause
        self.exit_code = cause.exit_code


class LabelOutOfRange(DataError):
    pass


class UnreadableFile(DataError):
    pass
