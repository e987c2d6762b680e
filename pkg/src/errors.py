"""
Exception hierarchy shared by every module; the CLI maps exit codes from here.
"""
from typing import Any, Dict, Optional


class IndefiniteDataError(Exception):
    """Base class for all library errors"""
    exit_code = 1


class ConfigError(IndefiniteDataError, ValueError):
    exit_code = 2


class DataError(IndefiniteDataError):
    exit_code = 3


class DimensionError(DataError, ValueError):
    pass


class PreconditionError(DataError, ValueError):
    pass


class StructureError(DataError, ValueError):
    """Graph violates the strict lower-triangular (linear order) invariant"""


class SchemaError(DataError, ValueError):
    def __init__(self, message: str, record_id: Any = None):
        self.record_id = record_id
        prefix = f"[dia_id={record_id}] " if record_id is not None else ""
        super().__init__(prefix + message)


class BindingError(DataError, KeyError):
    def __init__(self, message: str, missing: Optional[list] = None):
        self.missing = list(missing or [])
        super().__init__(message)

    def __str__(self) -> str:
        return self.args[0]


class TensorFormatError(DataError, OSError):
    pass


class MissingGroundTruthError(DataError, ValueError):
    pass


class DegenerateInputError(DataError, ValueError):
    pass


class UndefinedMetricError(DataError, ValueError):
    pass


class SplitError(DataError, ValueError):
    pass


class NumericalError(IndefiniteDataError, ArithmeticError):
    exit_code = 4


class TrainingError(NumericalError):
    """Loss went non-finite; carries the last good parameters"""

    def __init__(self, message: str, last_good_state: Optional[Dict] = None,
                 diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.diagnostics = diagnostics or {}
