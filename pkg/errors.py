"""Exception hierarchy shared by the library and the CLI.

Library code raises these; only ``ecglab.py`` turns them into exit codes.
"""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


class LabError(Exception):
    exit_code = EXIT_VALIDATION


# validation ---------------------------------------------------------------


class ParameterError(LabError, ValueError):
    pass


class ConfigError(ParameterError):
    pass


class ShapeError(LabError, ValueError):
    pass


class DomainError(LabError, ValueError):
    pass


class ContractError(LabError):
    pass


class PreconditionError(LabError):
    pass


class DurationError(LabError, ValueError):
    pass


class PanelLookupError(LabError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown panel"


class LifecycleError(LabError):
    pass


class PadPolicyError(LabError):
    pass


class VocabularyError(LabError, ValueError):
    pass


class DataError(LabError, ValueError):
    pass


class NormalizationError(LabError, ValueError):
    pass


class UndefinedSNRError(LabError, ValueError):
    pass


class UndefinedAUCError(LabError, ValueError):
    pass


# numeric divergence -------------------------------------------------------


class DivergenceError(LabError, ArithmeticError):
    exit_code = EXIT_DIVERGENCE

    def __init__(self, message, part=None, breakdown=None):
        super().__init__(message)
        self.part = part
        self.breakdown = breakdown or {}


# file formats -------------------------------------------------------------


class FormatError(LabError):
    exit_code = EXIT_IO


class RecordParseError(FormatError):
    def __init__(self, message, field=None, offset=None):
        super().__init__(message)
        self.field = field
        self.offset = offset


class RecordHeaderError(RecordParseError):
    pass


class LeadCountError(RecordParseError):
    pass


class TruncatedDataError(RecordParseError):
    pass


class NonFiniteValueError(RecordParseError):
    pass


class CheckpointFormatError(FormatError):
    pass


class ChecksumError(CheckpointFormatError):
    pass


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, LabError):
        return error.exit_code
    if isinstance(error, OSError):
        return EXIT_IO
    return 1
