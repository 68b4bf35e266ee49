"""
Exception types for the knowledge tracing engine

Each type carries the CLI exit code used by main.py.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration"""
    exit_code = 2


class DataError(ValueError):
    """Input data could not be processed"""
    exit_code = 3


class DataFormatError(DataError):
    """CSV header or file layout problem"""


class EncodingError(DataError):
    """Value cannot be encoded with the current vocabulary"""


class GradeClassificationError(DataError):
    """Grade symbol outside the known alphabet"""


class MergeError(DataError):
    """Reports cannot be merged into one grid"""


class WindowError(DataError):
    """Window longer than the model supports"""


class DimensionError(ValueError):
    """Operand shapes do not fit the operation"""
    exit_code = 4


class ContractError(ValueError):
    """Precondition of a numeric operation violated"""
    exit_code = 4


class EvaluationError(RuntimeError):
    """Objective produced a non-finite value"""
    exit_code = 4


class NumericAbortError(RuntimeError):
    """Training aborted on a non-finite loss or gradient"""
    exit_code = 4


class CheckpointError(RuntimeError):
    """Checkpoint file unreadable or incompatible"""
    exit_code = 5


class CalibrationError(ConfigError):
    """Target pass rate unreachable for the synthetic generator"""
