"""Tests for overlay module.

Tests the coordinate payload, NoOverlayBackend (pure Python) and
OverlayManager backend selection logic.
"""

import json
from unittest.mock import patch

import pytest

from textvideo_grounding.core import GroundingResult, OcrToken, ScoredFrame, ScoredToken
from textvideo_grounding.exceptions import OverlayError
from textvideo_grounding.overlay import (
    NoOverlayBackend,
    OverlayManager,
    PillowOverlayBackend,
    overlay_payload,
)

from .conftest import box, planted_episode

ANSWER_BOX = box(0.4, 0.4, 0.5, 0.45)


def _grounding() -> GroundingResult:
    stop = OcrToken(3, 1, "stop", ANSWER_BOX)
    exit_ = OcrToken(0, 2, "exit", box(0.05, 0.05, 0.15, 0.1))
    return GroundingResult(
        frames=(ScoredFrame(3, 0.8), ScoredFrame(0, 0.1)),
        boxes={3: (ScoredToken(stop, 0.9),), 0: (ScoredToken(exit_, 0.4),)},
    )


# ---------------------------------------------------------------------------
# overlay_payload
# ---------------------------------------------------------------------------


class TestOverlayPayload:
    def test_frames_follow_ranking(self):
        payload = overlay_payload(planted_episode(), "stop", _grounding())
        assert payload["episode"] == "planted"
        assert payload["answer"] == "stop"
        assert [f["frame"] for f in payload["frames"]] == [3, 0]

    def test_ground_truth_only_on_annotated_frames(self):
        frames = overlay_payload(planted_episode(), "stop", _grounding())["frames"]
        assert frames[0]["ground_truth"] == pytest.approx(ANSWER_BOX.to_list())
        assert frames[1]["ground_truth"] is None

    def test_predicted_boxes(self):
        frames = overlay_payload(planted_episode(), "stop", _grounding())["frames"]
        (pred,) = frames[0]["predicted"]
        assert pred["rank"] == 1
        assert pred["text"] == "stop"
        assert pred["track"] == 1

    def test_serializable(self):
        payload = overlay_payload(planted_episode(), "", GroundingResult(fallback=True))
        assert json.loads(json.dumps(payload))["fallback"] is True


# ---------------------------------------------------------------------------
# NoOverlayBackend
# ---------------------------------------------------------------------------


class TestNoOverlayBackend:
    def test_is_available(self):
        assert NoOverlayBackend().is_available() is False

    def test_render_draws_nothing(self, tmp_path):
        assert NoOverlayBackend().render({"frames": []}, tmp_path / "x.png") is None
        assert not (tmp_path / "x.png").exists()

    def test_custom_reason(self):
        assert NoOverlayBackend(reason="headless")._reason == "headless"


# ---------------------------------------------------------------------------
# OverlayManager backend selection
# ---------------------------------------------------------------------------


class TestOverlayManagerBackendSelection:
    def test_none_requested(self):
        mgr = OverlayManager("none")
        assert isinstance(mgr.backend, NoOverlayBackend)
        assert mgr.has_visual_support is False

    def test_auto_falls_back_without_pillow(self):
        with patch("textvideo_grounding.overlay.PIL_AVAILABLE", False):
            mgr = OverlayManager()
        assert isinstance(mgr.backend, NoOverlayBackend)

    def test_pillow_required_but_missing(self):
        with patch("textvideo_grounding.overlay.PIL_AVAILABLE", False):
            with pytest.raises(OverlayError):
                OverlayManager("pillow")

    def test_unknown_backend(self):
        with pytest.raises(OverlayError):
            OverlayManager("cairo")

    def test_coordinates_path(self, tmp_path):
        assert OverlayManager.coordinates_path(tmp_path / "a.png") == tmp_path / "a.json"


class TestOverlayManagerRender:
    def test_coordinates_written_without_pillow(self, tmp_path):
        with patch("textvideo_grounding.overlay.PIL_AVAILABLE", False):
            mgr = OverlayManager()
        image = mgr.render(planted_episode(), "stop", _grounding(), tmp_path / "out" / "ov")
        assert image is None
        data = json.loads((tmp_path / "out" / "ov.json").read_text())
        assert data["answer"] == "stop"

    def test_png_drawn_with_pillow(self, tmp_path):
        image_mod = pytest.importorskip("PIL.Image")
        mgr = OverlayManager("pillow")
        assert isinstance(mgr.backend, PillowOverlayBackend)
        image = mgr.render(planted_episode(), "stop", _grounding(), tmp_path / "ov.png")
        assert image == tmp_path / "ov.png"
        with image_mod.open(image) as sheet:
            assert sheet.size[0] > sheet.size[1]
        assert (tmp_path / "ov.json").exists()

    def test_unwritable_target(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OverlayError):
            OverlayManager("none").render(
                planted_episode(), "stop", _grounding(), blocker / "ov.png"
            )
