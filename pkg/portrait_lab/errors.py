"""
Exception hierarchy for Portrait Lab

Every error carries the process exit code the CLI reports for it.
"""

from typing import Any, Dict, Optional


class PortraitLabError(Exception):
    """Base class for all Portrait Lab errors"""
    exit_code: int = 1


class ArgumentError(PortraitLabError, ValueError):
    """Invalid argument to an operation"""
    exit_code = 2


class ConfigError(PortraitLabError):
    """Malformed or unknown experiment configuration"""
    exit_code = 2


class UnknownAttributeError(ArgumentError):
    """Edit request names an attribute outside the schema"""


class CheckpointError(PortraitLabError):
    """Missing, corrupt or mismatched checkpoint"""
    exit_code = 3


class UntrainedModelError(CheckpointError):
    """An operation needs a trained model that was not supplied"""


class DatasetError(PortraitLabError):
    """Dataset or corpus IO failure"""
    exit_code = 3


class DatasetExistsError(DatasetError):
    """Target dataset path exists and overwrite was not requested"""


class CorruptIndexError(DatasetError):
    """Dataset index is unreadable or inconsistent"""


class UnknownImageError(DatasetError):
    """Oracle lookup has no scene for the given image"""


class NumericalError(PortraitLabError):
    """Non-finite values during training or integration"""
    exit_code = 4

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class IntegrationError(NumericalError):
    """ODE state became non-finite at a solver step"""

    def __init__(self, message: str, step: int):
        super().__init__(message, {"step": step})
        self.step = step
