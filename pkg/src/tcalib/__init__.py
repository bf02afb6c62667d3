"""Attribute-aware test-time prompt calibration on toy frozen encoders."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigValidationError,
    CorruptionError,
    DegenerateInputError,
    FormatError,
    InvalidArgumentError,
    MissingClassError,
    NumericFailureError,
    SchemaError,
    TcalibError,
    VersionError,
)

__all__ = [
    "ConfigValidationError",
    "CorruptionError",
    "DegenerateInputError",
    "FormatError",
    "InvalidArgumentError",
    "MissingClassError",
    "NumericFailureError",
    "SchemaError",
    "TcalibError",
    "VersionError",
]
