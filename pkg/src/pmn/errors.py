"""Exception hierarchy for the PMN toolkit."""

from typing import Any, Dict, Optional


class PMNError(Exception):
    """Base class for every error raised by the pmn package."""


class DimensionError(PMNError, ValueError):
    """Raised when tensor shapes do not satisfy an operation's contract."""


class ContractError(PMNError):
    """Raised when an API is used outside its contract (e.g. backward on a non-scalar)."""


class EncodingError(PMNError, ValueError):
    """Raised when a sequence contains a character outside {A,C,G,T,N}."""

    def __init__(self, message: str, position: int):
        super().__init__(message)
        self.position = position


class ConfigError(PMNError, ValueError):
    """Raised for invalid configuration files, values or mismatched configs."""


class NonFiniteError(PMNError, ArithmeticError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class GradCheckError(PMNError):
    """Raised when finite-difference probing cannot be completed."""


class SynthesisError(PMNError):
    """Raised when a synthetic dataset cannot be generated from its spec."""


class DatasetFormatError(PMNError, ValueError):
    """Raised for malformed peak, label, genome or dataset files."""

    def __init__(self, message: str, path: Optional[str] = None, line_number: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}:{line_number}: " if line_number is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line_number = line_number


class CheckpointLoadError(PMNError):
    """Base class for checkpoint files that cannot be read back."""


class BadMagicError(CheckpointLoadError):
    pass


class TruncatedCheckpointError(CheckpointLoadError):
    pass


class ChecksumError(CheckpointLoadError):
    pass


class VersionMismatchError(CheckpointLoadError):
    pass


class CheckpointConfigError(ConfigError):
    """Raised when a checkpoint's config does not fit the dataset it is used with."""


class EvaluationError(PMNError, ValueError):
    """Raised when metrics cannot be aggregated (e.g. no defined per-label values)."""
