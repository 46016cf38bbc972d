"""Exception hierarchy shared by every module."""


class DebsError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ContractViolation(DebsError, ValueError):
    """A caller broke an operation's precondition."""

    exit_code = 2


class ConfigError(DebsError):
    exit_code = 2


class SamplerContractError(ContractViolation):
    """A batch handed to the trainer does not satisfy the sampling contract."""


class DataError(DebsError):
    exit_code = 3


class RecordFormatError(DataError):
    pass


class BadMagicError(RecordFormatError):
    pass


class VersionMismatchError(RecordFormatError):
    pass


class TruncatedFileError(RecordFormatError):
    pass


class ChecksumError(RecordFormatError):
    pass


class CheckpointError(DataError):
    pass


class NumericFault(DebsError, FloatingPointError):
    """NaN or Inf escaped a module boundary."""

    exit_code = 4


class NonDeterministicError(DebsError):
    """A function expected to be deterministic returned different values."""

    exit_code = 4


class ConvergenceError(DebsError):
    exit_code = 4
