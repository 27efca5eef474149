"""Custom exception hierarchy for textvideo-grounding.

Every failure raised by the library derives from ``TextVideoGroundingError``
so that the command line can map whole families of errors to exit codes.
"""

from typing import Optional


class TextVideoGroundingError(Exception):
    """Base exception for all textvideo-grounding errors."""


# -- Validation errors (exit code 2) -----------------------------------------


class ValidationError(TextVideoGroundingError):
    """Input data or configuration failed validation."""


class InvalidBoxError(ValidationError):
    """Bounding box coordinates are out of range or inverted."""


class InvalidTokenError(ValidationError):
    """OCR token is malformed (empty text, negative ids)."""


class AnnotationParseError(ValidationError):
    """Annotation or prediction file does not follow the documented schema."""

    def __init__(self, message: str, field: str, episode_id: Optional[str] = None) -> None:
        self.field = field
        self.episode_id = episode_id
        where = f" (episode {episode_id!r})" if episode_id is not None else ""
        super().__init__(f"{message}: field {field!r}{where}")


class AnnotationValidationError(ValidationError):
    """Annotation parsed but violates a grounding invariant."""

    def __init__(self, message: str, episode_id: Optional[str] = None) -> None:
        self.episode_id = episode_id
        where = f"episode {episode_id!r}: " if episode_id is not None else ""
        super().__init__(f"{where}{message}")


class ConfigError(ValidationError):
    """Configuration value is missing, unknown, or out of range."""

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        self.key = key
        prefix = f"{key}: " if key else ""
        super().__init__(f"{prefix}{message}")


class ConfigMismatchError(ValidationError):
    """Checkpoint was produced under a different model configuration."""


# -- Model errors ------------------------------------------------------------


class EncodingError(TextVideoGroundingError):
    """Feature construction failed (dimension mismatch, id out of range)."""


class ProviderWidthError(EncodingError):
    """Embedding provider declares a width different from the expected one."""


class GroundingError(TextVideoGroundingError):
    """Temporal or spatial grounding received unusable inputs."""


class DecodingError(TextVideoGroundingError):
    """Answer decoder received unusable inputs."""


class ObjectiveError(TextVideoGroundingError):
    """Loss computation received unusable inputs."""


# -- Dataset errors ----------------------------------------------------------


class DatasetError(TextVideoGroundingError):
    """Base class for dataset generation and loading errors."""


class DatasetFormatError(DatasetError):
    """Dataset directory is incomplete or a feature file is corrupt."""


class InfeasibleConfigError(DatasetError):
    """Synthetic generator cannot satisfy the requested configuration."""


# -- Evaluation / training errors -------------------------------------------


class MetricsError(TextVideoGroundingError):
    """Predictions and ground truth cannot be matched."""


class CheckpointError(TextVideoGroundingError):
    """Checkpoint file is missing, unreadable, or of an unknown version."""


class TrainingDivergedError(TextVideoGroundingError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, parts: dict[str, float]) -> None:
        self.iteration = iteration
        self.parts = parts
        detail = ", ".join(f"{k}={v}" for k, v in parts.items())
        super().__init__(f"non-finite loss at iteration {iteration} ({detail})")


# -- Overlay errors ----------------------------------------------------------


class OverlayError(TextVideoGroundingError):
    """Overlay rendering failed."""
