"""Grounding overlays for inspecting single predictions.

Every render writes the box coordinates as JSON. When Pillow is installed a
PNG contact sheet is drawn next to it: one blank canvas per selected frame,
ground-truth boxes in green and grounded OCR boxes in yellow.
"""

import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Optional, Union

from .core import Episode, GroundingResult
from .exceptions import OverlayError

logger = logging.getLogger(__name__)

PIL_AVAILABLE = False
Image = None
ImageDraw = None

try:
    from PIL import Image as _Image
    from PIL import ImageDraw as _ImageDraw

    Image = _Image
    ImageDraw = _ImageDraw
    PIL_AVAILABLE = True
except ImportError as e:
    logger.debug(f"Pillow not available: {e}")

PathLike = Union[str, Path]

GROUND_TRUTH_COLOR = (0, 170, 0)
PREDICTED_COLOR = (230, 190, 0)
CANVAS_SIZE = (320, 180)
GAP = 8


def overlay_payload(episode: Episode, answer: str, grounding: GroundingResult) -> dict[str, Any]:
    """Per-frame ground-truth and predicted boxes in normalized coordinates."""
    annotation = episode.annotation
    frames = []
    for scored in grounding.frames:
        gt = annotation.box_for(scored.index) if annotation is not None else None
        frames.append(
            {
                "frame": scored.index,
                "score": scored.score,
                "ground_truth": gt.to_list() if gt is not None else None,
                "predicted": [
                    {
                        "rank": rank,
                        "score": t.score,
                        "text": t.token.text,
                        "track": t.token.track_id,
                        "box": t.token.box.to_list(),
                    }
                    for rank, t in enumerate(grounding.boxes.get(scored.index, ()), start=1)
                ],
            }
        )
    return {
        "episode": episode.id,
        "question": episode.question,
        "answer": answer,
        "fallback": grounding.fallback,
        "colors": {"ground_truth": "green", "predicted": "yellow"},
        "frames": frames,
    }


class OverlayBackend(ABC):
    """Abstract base class for overlay renderers."""

    @abstractmethod
    def is_available(self) -> bool:
        """Whether the backend can draw images."""

    @abstractmethod
    def render(self, payload: dict[str, Any], out_path: Path) -> Optional[Path]:
        """Draw ``payload`` to ``out_path``; ``None`` when nothing was drawn."""


class PillowOverlayBackend(OverlayBackend):
    """Contact sheet of blank canvases drawn with Pillow."""

    def __init__(self, canvas_size: tuple[int, int] = CANVAS_SIZE) -> None:
        if not PIL_AVAILABLE:
            raise OverlayError("Pillow is not installed")
        self.canvas_size = canvas_size

    def is_available(self) -> bool:
        return True

    def _rect(self, box: list[float], origin: int) -> list[float]:
        w, h = self.canvas_size
        x1, y1, x2, y2 = box
        return [origin + x1 * (w - 1), y1 * (h - 1), origin + x2 * (w - 1), y2 * (h - 1)]

    def render(self, payload: dict[str, Any], out_path: Path) -> Optional[Path]:
        frames = payload["frames"]
        w, h = self.canvas_size
        count = max(len(frames), 1)
        sheet = Image.new("RGB", (count * w + (count - 1) * GAP, h + 16), "white")
        draw = ImageDraw.Draw(sheet)
        for i, frame in enumerate(frames):
            origin = i * (w + GAP)
            draw.rectangle([origin, 0, origin + w - 1, h - 1], fill=(24, 24, 24))
            draw.text((origin + 2, h + 2), f"frame {frame['frame']}", fill="black")
            if frame["ground_truth"] is not None:
                draw.rectangle(
                    self._rect(frame["ground_truth"], origin), outline=GROUND_TRUTH_COLOR, width=3
                )
            for box in frame["predicted"]:
                rect = self._rect(box["box"], origin)
                draw.rectangle(rect, outline=PREDICTED_COLOR, width=2)
                draw.text((rect[0] + 2, rect[1] + 2), str(box["rank"]), fill=PREDICTED_COLOR)
        try:
            sheet.save(out_path, format="PNG")
        except OSError as e:
            raise OverlayError(f"Cannot write overlay image {out_path}: {e}") from e
        return out_path


class NoOverlayBackend(OverlayBackend):
    """Fallback backend when no renderer is available; coordinates only."""

    def __init__(self, reason: str = "No overlay renderer available") -> None:
        self._reason = reason

    def is_available(self) -> bool:
        return False

    def render(self, payload: dict[str, Any], out_path: Path) -> Optional[Path]:
        logger.info(f"Overlay image not drawn: {self._reason}")
        return None


class OverlayManager:
    """Selects a backend and writes coordinate dumps and images.

    Args:
        prefer: ``"auto"`` (Pillow when importable), ``"pillow"`` or ``"none"``.
    """

    def __init__(self, prefer: str = "auto") -> None:
        self._prefer = prefer
        self._backend = self._select_backend()
        logger.info(f"Overlay backend: {type(self._backend).__name__}")

    def _select_backend(self) -> OverlayBackend:
        if self._prefer == "none":
            return NoOverlayBackend("image rendering disabled")
        if self._prefer not in ("auto", "pillow"):
            raise OverlayError(f"Unknown overlay backend {self._prefer!r}")
        try:
            return PillowOverlayBackend()
        except OverlayError as e:
            if self._prefer == "pillow":
                raise
            logger.warning(f"Falling back to coordinate-only overlays: {e}")
            return NoOverlayBackend(str(e))

    @property
    def backend(self) -> OverlayBackend:
        return self._backend

    @property
    def has_visual_support(self) -> bool:
        return self._backend.is_available()

    @staticmethod
    def coordinates_path(out_path: PathLike) -> Path:
        return Path(out_path).with_suffix(".json")

    def render(
        self, episode: Episode, answer: str, grounding: GroundingResult, out_path: PathLike
    ) -> Optional[Path]:
        """Write the coordinate dump and, when possible, the PNG image.

        Returns:
            Path of the PNG image, or ``None`` when only coordinates were written.
        """
        out = Path(out_path).with_suffix(".png")
        payload = overlay_payload(episode, answer, grounding)
        coords = self.coordinates_path(out)
        try:
            out.parent.mkdir(parents=True, exist_ok=True)
            coords.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        except OSError as e:
            raise OverlayError(f"Cannot write overlay coordinates {coords}: {e}") from e
        return self._backend.render(payload, out)
