"""Domain data model shared by every stage of the pipeline.

Holds the value types (boxes, OCR tokens, episodes, grounding results,
answer decodings) and the JSON annotation/prediction file I/O. All values
are immutable after construction, so they can be shared across threads.
"""

import json
import logging
import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .exceptions import (
    AnnotationParseError,
    AnnotationValidationError,
    InvalidBoxError,
    InvalidTokenError,
    ValidationError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ANNOTATION_FORMAT_VERSION = 1


def is_finite_number(value: Any) -> bool:
    """True for finite ints and floats; bools and overflowing ints are rejected."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False
    try:
        return math.isfinite(value)
    except OverflowError:
        return False


# -- Geometry ----------------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in coordinates normalized to the frame size.

    ``(x1, y1)`` is the top-left corner and ``(x2, y2)`` the bottom-right one.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        for value in coords:
            if not is_finite_number(value):
                raise InvalidBoxError(f"Box coordinate {value!r} is not a finite number")
            if value < 0.0 or value > 1.0:
                raise InvalidBoxError(f"Box coordinate {value} outside [0, 1]")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise InvalidBoxError(f"Inverted box corners: {coords}")
        for name, value in zip(("x1", "y1", "x2", "y2"), coords):
            object.__setattr__(self, name, float(value))

    @classmethod
    def from_list(cls, values: Any) -> "BoundingBox":
        """Build a box from a ``[x1, y1, x2, y2]`` sequence."""
        if not isinstance(values, (list, tuple)) or len(values) != 4:
            raise InvalidBoxError(f"Expected 4 coordinates, got {values!r}")
        return cls(*values)

    @classmethod
    def from_pixels(
        cls, x1: float, y1: float, x2: float, y2: float, width: float, height: float
    ) -> "BoundingBox":
        """Normalize a pixel-space box using the declared frame size."""
        if width <= 0 or height <= 0:
            raise InvalidBoxError(f"Frame size must be positive, got {width}x{height}")
        return cls(x1 / width, y1 / height, x2 / width, y2 / height)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        """Get the center point of the box."""
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def intersection_area(self, other: "BoundingBox") -> float:
        """Area of the overlap with another box (0 when disjoint)."""
        w = min(self.x2, other.x2) - max(self.x1, other.x1)
        h = min(self.y2, other.y2) - max(self.y1, other.y1)
        if w <= 0.0 or h <= 0.0:
            return 0.0
        return w * h

    def enclose(self, other: "BoundingBox") -> "BoundingBox":
        """Smallest box containing both boxes."""
        return BoundingBox(
            min(self.x1, other.x1),
            min(self.y1, other.y1),
            max(self.x2, other.x2),
            max(self.y2, other.y2),
        )

    def to_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


# -- Scene text --------------------------------------------------------------


@dataclass(frozen=True)
class OcrToken:
    """One detected and recognized scene-text instance."""

    frame_index: int
    track_id: int
    text: str
    box: BoundingBox

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise InvalidTokenError(f"OCR token text must be non-empty, got {self.text!r}")
        if self.frame_index < 0:
            raise InvalidTokenError(f"Negative frame index {self.frame_index}")
        if self.track_id < 0:
            raise InvalidTokenError(f"Negative track id {self.track_id}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "frame": self.frame_index,
            "track": self.track_id,
            "text": self.text,
            "box": self.box.to_list(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "OcrToken":
        return cls(
            frame_index=int(data["frame"]),
            track_id=int(data["track"]),
            text=data["text"],
            box=BoundingBox.from_list(data["box"]),
        )


# -- Annotations -------------------------------------------------------------


@dataclass(frozen=True)
class GroundingAnnotation:
    """Spatio-temporal answer labels of one question.

    ``segments`` are inclusive, 0-based frame ranges; ``boxes`` holds at most
    one answer box per frame and every boxed frame lies inside a segment.
    """

    segments: tuple[tuple[int, int], ...]
    boxes: Mapping[int, BoundingBox] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "segments", tuple((int(s), int(e)) for s, e in self.segments)
        )
        object.__setattr__(self, "boxes", {int(k): v for k, v in sorted(self.boxes.items())})
        self._check()

    def _check(self) -> None:
        prev_end = -1
        for start, end in self.segments:
            if start < 0 or end < start:
                raise AnnotationValidationError(f"Invalid segment [{start}, {end}]")
            if start <= prev_end:
                raise AnnotationValidationError(
                    f"Segment [{start}, {end}] overlaps or precedes the previous segment"
                )
            prev_end = end
        for frame, box in self.boxes.items():
            if not isinstance(box, BoundingBox):
                raise AnnotationValidationError(f"Frame {frame} box is not a BoundingBox")
            if not self.contains(frame):
                raise AnnotationValidationError(f"Boxed frame {frame} lies outside all segments")

    def contains(self, frame: int) -> bool:
        """Check whether a frame lies inside an annotated segment."""
        return any(start <= frame <= end for start, end in self.segments)

    def box_for(self, frame: int) -> Optional[BoundingBox]:
        return self.boxes.get(frame)

    @property
    def last_frame(self) -> int:
        """Largest frame index referenced by the annotation (-1 if empty)."""
        return max((end for _, end in self.segments), default=-1)

    @property
    def num_segment_frames(self) -> int:
        return sum(end - start + 1 for start, end in self.segments)


# -- Episodes ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Episode:
    """One question over a video given as per-frame feature vectors."""

    id: str
    question: str
    frames: np.ndarray
    ocr: tuple[OcrToken, ...]
    answers: tuple[str, ...]
    annotation: Optional[GroundingAnnotation] = None

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValidationError(f"Episode {self.id}: frames must be a non-empty T x dim matrix")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "ocr", tuple(self.ocr))
        object.__setattr__(self, "answers", tuple(self.answers))
        if not self.answers:
            raise ValidationError(f"Episode {self.id}: at least one answer is required")
        for token in self.ocr:
            if token.frame_index >= self.num_frames:
                raise ValidationError(
                    f"Episode {self.id}: OCR token on frame {token.frame_index} "
                    f">= {self.num_frames} frames"
                )
        if self.annotation is not None and self.annotation.last_frame >= self.num_frames:
            raise AnnotationValidationError(
                f"annotation references frame {self.annotation.last_frame} "
                f"but the episode has {self.num_frames} frames",
                self.id,
            )

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def visual_dim(self) -> int:
        return int(self.frames.shape[1])

    def tokens_by_frame(self) -> list[list[OcrToken]]:
        """OCR tokens grouped per frame, preserving their detection order."""
        grouped: list[list[OcrToken]] = [[] for _ in range(self.num_frames)]
        for token in self.ocr:
            grouped[token.frame_index].append(token)
        return grouped

    def check_capacity(self, max_tokens_per_frame: int) -> None:
        """Raise if any frame carries more OCR tokens than the model accepts."""
        for frame, tokens in enumerate(self.tokens_by_frame()):
            if len(tokens) > max_tokens_per_frame:
                raise ValidationError(
                    f"Episode {self.id}: frame {frame} has {len(tokens)} OCR tokens "
                    f"(limit {max_tokens_per_frame})"
                )

    def without_annotation(self) -> "Episode":
        """Copy with grounding labels removed, as seen by inference."""
        return replace(self, annotation=None)

    def with_ocr(self, tokens: tuple[OcrToken, ...]) -> "Episode":
        return replace(self, ocr=tuple(tokens))


# -- Grounding results -------------------------------------------------------


class RankOrder(Enum):
    """Direction in which a grounding ranking is ordered by score."""

    DESCENDING = "descending"
    ASCENDING = "ascending"


@dataclass(frozen=True)
class ScoredFrame:
    index: int
    score: float


@dataclass(frozen=True)
class ScoredToken:
    token: OcrToken
    score: float


@dataclass(frozen=True)
class GroundingResult:
    """Ranked frames and, per ranked frame, ranked OCR boxes.

    Positive results are ordered by descending relevance; negative results
    (the least relevant candidates) by ascending score.
    """

    frames: tuple[ScoredFrame, ...] = ()
    boxes: Mapping[int, tuple[ScoredToken, ...]] = field(default_factory=dict)
    order: RankOrder = RankOrder.DESCENDING
    fallback: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "boxes", {int(k): tuple(v) for k, v in self.boxes.items()})

    def validate(self, k1: int, k2: int) -> None:
        """Check the ranking invariants against the selection budgets."""
        if len(self.frames) > k1:
            raise ValidationError(f"{len(self.frames)} frames selected, K1={k1}")
        self._check_sorted([f.score for f in self.frames], "frame")
        selected = {f.index for f in self.frames}
        for frame, tokens in self.boxes.items():
            if frame not in selected:
                raise ValidationError(f"Boxes listed for unselected frame {frame}")
            if len(tokens) > k2:
                raise ValidationError(f"{len(tokens)} boxes on frame {frame}, K2={k2}")
            self._check_sorted([t.score for t in tokens], f"frame {frame} box")

    def _check_sorted(self, scores: list[float], what: str) -> None:
        for a, b in zip(scores, scores[1:]):
            bad = b > a if self.order is RankOrder.DESCENDING else b < a
            if bad:
                raise ValidationError(f"{what} scores not ranked {self.order.value}: {scores}")

    def top(self, k_t: int, k_s: int) -> Iterator[tuple[int, ScoredToken]]:
        """Yield ``(frame, token)`` pairs inside the top ``k_t x k_s`` window."""
        for scored in self.frames[:k_t]:
            for token in self.boxes.get(scored.index, ())[:k_s]:
                yield scored.index, token

    @property
    def num_boxes(self) -> int:
        return sum(len(v) for v in self.boxes.values())


# -- Answer decoding ---------------------------------------------------------


class TokenSource(Enum):
    """Where an emitted answer word comes from."""

    VOCAB = "vocab"
    OCR = "ocr"


@dataclass(frozen=True)
class DecodedWord:
    """One emitted answer word.

    ``index`` is the vocabulary id for ``VOCAB`` words and the candidate
    position for ``OCR`` words, whose ``token`` is the copied OCR token.
    """

    text: str
    source: TokenSource
    index: int
    token: Optional[OcrToken] = None


@dataclass(frozen=True, eq=False)
class AnswerDecoding:
    """Emitted words plus the per-step concatenated score vectors."""

    words: tuple[DecodedWord, ...]
    step_scores: np.ndarray

    @property
    def num_steps(self) -> int:
        return int(self.step_scores.shape[0])


@dataclass(frozen=True)
class Prediction:
    """Answer string and positive grounding produced for one episode."""

    answer: str
    grounding: GroundingResult


@dataclass(frozen=True)
class EpisodeRecord:
    """Question, answers and optional grounding labels of one episode."""

    id: str
    question: str
    answers: tuple[str, ...]
    annotation: Optional[GroundingAnnotation] = None


# ---------------------------------------------------------------------------
# Annotation file I/O
# ---------------------------------------------------------------------------


def _require(entry: Mapping[str, Any], key: str, kind: type, episode_id: Optional[str]) -> Any:
    if key not in entry:
        raise AnnotationParseError("missing", key, episode_id)
    value = entry[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise AnnotationParseError(f"expected {kind.__name__}", key, episode_id)
    return value


def _parse_record(entry: Any) -> EpisodeRecord:
    if not isinstance(entry, dict):
        raise AnnotationParseError("episode entry must be an object", "episodes")
    episode_id = _require(entry, "id", str, None)
    question = _require(entry, "question", str, episode_id)
    answers = _require(entry, "answers", list, episode_id)
    if not answers or not all(isinstance(a, str) for a in answers):
        raise AnnotationParseError("expected non-empty list of strings", "answers", episode_id)

    raw_segments = entry.get("segments", [])
    raw_boxes = entry.get("boxes", {})
    if not isinstance(raw_segments, list):
        raise AnnotationParseError("expected list", "segments", episode_id)
    if not isinstance(raw_boxes, dict):
        raise AnnotationParseError("expected object", "boxes", episode_id)

    segments = []
    for seg in raw_segments:
        if (
            not isinstance(seg, list)
            or len(seg) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in seg)
        ):
            raise AnnotationParseError("expected [int, int]", "segments", episode_id)
        segments.append((seg[0], seg[1]))

    frame_size = entry.get("frame_size")
    if frame_size is not None and (
        not isinstance(frame_size, list)
        or len(frame_size) != 2
        or not all(is_finite_number(v) and v > 0 for v in frame_size)
    ):
        raise AnnotationParseError("expected positive [width, height]", "frame_size", episode_id)

    boxes: dict[int, BoundingBox] = {}
    for key, coords in raw_boxes.items():
        try:
            frame = int(key)
        except ValueError as e:
            raise AnnotationParseError(f"non-integer frame key {key!r}", "boxes", episode_id) from e
        if frame in boxes:
            raise AnnotationParseError(f"duplicate frame key {key!r}", "boxes", episode_id)
        if str(frame) != key:
            raise AnnotationParseError(f"non-canonical frame key {key!r}", "boxes", episode_id)
        if not isinstance(coords, list) or len(coords) != 4:
            raise AnnotationParseError(f"frame {key}: expected 4 coordinates", "boxes", episode_id)
        if not all(is_finite_number(v) for v in coords):
            raise AnnotationParseError(f"frame {key}: expected finite numbers", "boxes", episode_id)
        try:
            if frame_size is not None:
                boxes[frame] = BoundingBox.from_pixels(*coords, *frame_size)
            else:
                boxes[frame] = BoundingBox(*coords)
        except (InvalidBoxError, ArithmeticError) as e:
            raise AnnotationValidationError(f"frame {key}: {e}", episode_id) from e

    annotation = None
    if segments or boxes:
        try:
            annotation = GroundingAnnotation(segments=tuple(segments), boxes=boxes)
        except AnnotationValidationError as e:
            raise AnnotationValidationError(str(e), episode_id) from e

    return EpisodeRecord(
        id=episode_id, question=question, answers=tuple(answers), annotation=annotation
    )


def _object_without_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    obj: dict[str, Any] = {}
    for key, value in pairs:
        if key in obj:
            raise AnnotationParseError(f"duplicate key {key!r}", "<file>")
        obj[key] = value
    return obj


def read_annotation_file(path: PathLike) -> list[EpisodeRecord]:
    """Parse an annotation file into episode records.

    Raises:
        AnnotationParseError: The file is not valid JSON or violates the schema.
        AnnotationValidationError: A parsed annotation violates an invariant.
    """
    try:
        data = json.loads(
            Path(path).read_text(encoding="utf-8"), object_pairs_hook=_object_without_duplicates
        )
    except json.JSONDecodeError as e:
        raise AnnotationParseError(f"invalid JSON ({e.msg})", "<file>") from e
    except UnicodeDecodeError as e:
        raise AnnotationParseError("file is not UTF-8", "<file>") from e
    if not isinstance(data, dict) or not isinstance(data.get("episodes"), list):
        raise AnnotationParseError("missing episode list", "episodes")

    records = [_parse_record(entry) for entry in data["episodes"]]
    seen: set[str] = set()
    for record in records:
        if record.id in seen:
            raise AnnotationValidationError("duplicate episode id", record.id)
        seen.add(record.id)
    logger.debug(f"Read {len(records)} annotation records from {path}")
    return records


def load_annotations(path: PathLike) -> dict[str, GroundingAnnotation]:
    """Load the grounding labels of a split, keyed by episode id.

    Records without segments carry no grounding labels and are omitted.
    """
    return {r.id: r.annotation for r in read_annotation_file(path) if r.annotation is not None}


def _record_to_dict(record: EpisodeRecord) -> dict[str, Any]:
    ann = record.annotation
    return {
        "id": record.id,
        "question": record.question,
        "answers": list(record.answers),
        "segments": [list(s) for s in ann.segments] if ann else [],
        "boxes": {str(k): b.to_list() for k, b in ann.boxes.items()} if ann else {},
    }


def save_annotations(records: list[EpisodeRecord], path: PathLike) -> None:
    """Write episode records in the annotation schema."""
    payload = {"episodes": [_record_to_dict(r) for r in records]}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# Prediction file I/O
# ---------------------------------------------------------------------------


def _grounding_to_dict(result: GroundingResult) -> dict[str, Any]:
    return {
        "pred_frames": [{"frame": f.index, "score": float(f.score)} for f in result.frames],
        "pred_boxes": {
            str(frame): [
                {
                    "box": t.token.box.to_list(),
                    "score": float(t.score),
                    "text": t.token.text,
                    "track_id": t.token.track_id,
                }
                for t in tokens
            ]
            for frame, tokens in result.boxes.items()
        },
        "order": result.order.value,
        "fallback": result.fallback,
    }


def _grounding_from_dict(entry: Mapping[str, Any], episode_id: str) -> GroundingResult:
    frames_raw = _require(entry, "pred_frames", list, episode_id)
    boxes_raw = _require(entry, "pred_boxes", dict, episode_id)
    try:
        frames = tuple(ScoredFrame(int(f["frame"]), float(f["score"])) for f in frames_raw)
        boxes = {}
        for key, tokens in boxes_raw.items():
            frame = int(key)
            boxes[frame] = tuple(
                ScoredToken(
                    OcrToken(
                        frame_index=frame,
                        track_id=int(t["track_id"]),
                        text=t["text"],
                        box=BoundingBox.from_list(t["box"]),
                    ),
                    float(t["score"]),
                )
                for t in tokens
            )
        order = RankOrder(entry.get("order", RankOrder.DESCENDING.value))
    except (KeyError, TypeError, ValueError) as e:
        raise AnnotationParseError(f"malformed grounding ({e})", "pred_boxes", episode_id) from e
    return GroundingResult(
        frames=frames, boxes=boxes, order=order, fallback=bool(entry.get("fallback", False))
    )


def save_predictions(
    results: Mapping[str, Prediction],
    path: PathLike,
    *,
    config_hash: Optional[str] = None,
    regime: Optional[str] = None,
) -> None:
    """Write predictions (answer plus ranked grounding) for a split.

    Raises:
        OSError: The path is not writable.
    """
    payload: dict[str, Any] = {
        "predictions": [
            {"id": episode_id, "pred_answer": pred.answer, **_grounding_to_dict(pred.grounding)}
            for episode_id, pred in results.items()
        ]
    }
    if config_hash is not None:
        payload["config_hash"] = config_hash
    if regime is not None:
        payload["regime"] = regime
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")
    logger.debug(f"Wrote {len(results)} predictions to {path}")


def load_predictions(path: PathLike) -> dict[str, Prediction]:
    """Read a prediction file written by :func:`save_predictions`."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise AnnotationParseError(f"invalid JSON ({e.msg})", "<file>") from e
    if not isinstance(data, dict) or not isinstance(data.get("predictions"), list):
        raise AnnotationParseError("missing prediction list", "predictions")

    predictions: dict[str, Prediction] = {}
    for entry in data["predictions"]:
        if not isinstance(entry, dict):
            raise AnnotationParseError("prediction entry must be an object", "predictions")
        episode_id = _require(entry, "id", str, None)
        answer = _require(entry, "pred_answer", str, episode_id)
        predictions[episode_id] = Prediction(answer, _grounding_from_dict(entry, episode_id))
    return predictions
