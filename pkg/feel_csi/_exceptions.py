"""
Exception hierarchy for the FEEL CSI-feedback simulator.
"""

from typing import Optional


class FeelError(Exception):
    """Base exception for simulator errors."""


class ConfigError(FeelError):
    """Raised for configuration file and parameter errors."""


class InvalidGeometryError(FeelError):
    """Raised when a cell geometry cannot host a UE."""


class DomainError(FeelError):
    """Raised when CSI arrives in the wrong domain."""


class ShapeMismatchError(FeelError):
    """Raised when tensors, vectors or payloads disagree in shape."""


class UndefinedInputError(FeelError):
    """Raised when a metric or codec input makes the result undefined."""


class EmptyDatasetError(FeelError):
    """Raised when training is requested on an empty split."""


class TemplateMismatchError(FeelError):
    """Raised when a payload does not match its ParamSet template."""


class DatasetExistsError(FeelError):
    """Raised when generated files would overwrite existing ones."""


class MissingDatasetError(FeelError):
    """Raised when an experiment needs datasets that are not on disk."""


class InvariantViolation(FeelError):
    """Raised when a run breaks one of the harness invariants."""


class FormatError(FeelError):
    """Raised for malformed binary files, with the offending file and offset."""

    def __init__(self, message: str, path: Optional[str] = None, offset: int = 0):
        self.path = path
        self.offset = offset
        where = f"{path} at offset {offset}" if path else f"offset {offset}"
        super().__init__(f"{where}: {message}")
