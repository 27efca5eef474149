"""Grounded question answering over scene text in videos.

Answers questions about the text visible in video frames and localizes the
supporting OCR boxes in time and space, training from question-answer pairs
alone. Grounding labels are only used for evaluation.
"""

__version__ = "0.1.0"

from .exceptions import (
    AnnotationParseError,
    AnnotationValidationError,
    CheckpointError,
    ConfigError,
    ConfigMismatchError,
    DatasetError,
    DatasetFormatError,
    DecodingError,
    EncodingError,
    GroundingError,
    InfeasibleConfigError,
    InvalidBoxError,
    InvalidTokenError,
    MetricsError,
    ObjectiveError,
    OverlayError,
    ProviderWidthError,
    TextVideoGroundingError,
    TrainingDivergedError,
    ValidationError,
)


def main() -> None:
    """Entry point for the command-line interface."""
    import sys

    from .cli import main as _main

    sys.exit(_main())


__all__ = [
    "main",
    "__version__",
    "TextVideoGroundingError",
    "ValidationError",
    "InvalidBoxError",
    "InvalidTokenError",
    "AnnotationParseError",
    "AnnotationValidationError",
    "ConfigError",
    "ConfigMismatchError",
    "EncodingError",
    "ProviderWidthError",
    "GroundingError",
    "DecodingError",
    "ObjectiveError",
    "DatasetError",
    "DatasetFormatError",
    "InfeasibleConfigError",
    "MetricsError",
    "CheckpointError",
    "TrainingDivergedError",
    "OverlayError",
]
