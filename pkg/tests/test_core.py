"""Tests for the core data model and the annotation/prediction file formats."""

import copy
import json
import random

import numpy as np
import pytest

from textvideo_grounding.core import (
    BoundingBox,
    Episode,
    EpisodeRecord,
    GroundingAnnotation,
    GroundingResult,
    OcrToken,
    Prediction,
    RankOrder,
    ScoredFrame,
    ScoredToken,
    load_annotations,
    load_predictions,
    read_annotation_file,
    save_annotations,
    save_predictions,
)
from textvideo_grounding.exceptions import (
    AnnotationParseError,
    AnnotationValidationError,
    InvalidBoxError,
    InvalidTokenError,
    ValidationError,
)

from .conftest import box, make_episode


def _write(path, episodes):
    path.write_text(json.dumps({"episodes": episodes}), encoding="utf-8")
    return path


_VALID_RECORD = {
    "id": "q1",
    "question": "what does the sign say?",
    "answers": ["stop"],
    "segments": [[1, 3], [6, 8]],
    "boxes": {"1": [0.1, 0.1, 0.2, 0.2], "2": [0.1, 0.1, 0.25, 0.2], "7": [0.4, 0.4, 0.5, 0.5]},
}

_JUNK = [None, 3, -1, 1.5, "x", "", [], {}, True, float("nan"), [1, 2]]


def _drop_field(rng, entry):
    entry.pop(rng.choice(sorted(entry)), None)


def _retype_field(rng, entry):
    key = rng.choice(["id", "question", "answers", "segments", "boxes"])
    entry[key] = copy.deepcopy(rng.choice(_JUNK))


def _box_lists(entry):
    boxes = entry.get("boxes")
    if not isinstance(boxes, dict):
        return []
    return [(k, v) for k, v in boxes.items() if isinstance(v, list)]


def _replace_coords(rng, entry):
    if isinstance(entry.get("boxes"), dict) and entry["boxes"]:
        key = rng.choice(sorted(entry["boxes"]))
        entry["boxes"][key] = rng.choice(["0.1,0.1,0.2,0.2", 0.5, None, {"x": 1}, [0.1, 0.2]])


def _bad_coordinate(rng, entry):
    lists = _box_lists(entry)
    if lists:
        _, coords = rng.choice(lists)
        if coords:
            bad = [float("nan"), float("inf"), -float("inf"), 10**400, True, False, -0.1, 1.5, "1"]
            coords[rng.randrange(len(coords))] = rng.choice(bad)


def _swap_corners(rng, entry):
    lists = [c for _, c in _box_lists(entry) if len(c) == 4]
    if lists:
        coords = rng.choice(lists)
        coords[0], coords[2] = coords[2], coords[0]
        coords[1], coords[3] = coords[3], coords[1]


def _invert_segment(rng, entry):
    segments = entry.get("segments")
    if isinstance(segments, list) and segments and isinstance(segments[0], list):
        segments[0].reverse()


def _overlap_segment(rng, entry):
    segments = entry.get("segments")
    if isinstance(segments, list):
        segments.append(rng.choice([[2, 4], [0, 9], [8, 8], [3, 2], [-1, 0]]))


def _retype_segment_bound(rng, entry):
    segments = entry.get("segments")
    if isinstance(segments, list) and segments and isinstance(segments[-1], list):
        segments[-1][0] = rng.choice([1.0, "1", None, True, 10**30])


def _duplicate_frame_key(rng, entry):
    lists = _box_lists(entry)
    if lists:
        key, coords = rng.choice(lists)
        entry["boxes"][rng.choice(["0" + key, " " + key, key + " "])] = list(coords)


def _move_box(rng, entry):
    lists = _box_lists(entry)
    if lists:
        key, coords = rng.choice(lists)
        del entry["boxes"][key]
        entry["boxes"][str(rng.choice([0, 4, 5, 9, -1, 100]))] = coords


_FRAME_SIZES = [
    [200, 100],
    [0, 100],
    [-1, 5],
    [float("nan"), 1],
    [True, 2],
    [100],
    "100x100",
    [float("inf"), 1],
    [1e-320, 1.0],
    [10**400, 10],
]


def _frame_size(rng, entry):
    entry["frame_size"] = copy.deepcopy(rng.choice(_FRAME_SIZES))


_MUTATIONS = [
    _drop_field,
    _retype_field,
    _replace_coords,
    _bad_coordinate,
    _swap_corners,
    _invert_segment,
    _overlap_segment,
    _retype_segment_bound,
    _duplicate_frame_key,
    _move_box,
    _frame_size,
]


def _assert_well_formed(ann: GroundingAnnotation) -> None:
    prev_end = -1
    for start, end in ann.segments:
        assert type(start) is int and type(end) is int
        assert prev_end < start <= end
        prev_end = end
    for frame, b in ann.boxes.items():
        assert type(frame) is int
        assert ann.contains(frame)
        coords = b.to_list()
        assert all(type(v) is float and 0.0 <= v <= 1.0 for v in coords)
        assert b.x1 <= b.x2 and b.y1 <= b.y2


# ---------------------------------------------------------------------------
# BoundingBox / OcrToken
# ---------------------------------------------------------------------------


class TestBoundingBox:
    def test_valid_box(self):
        b = BoundingBox(0.1, 0.2, 0.3, 0.6)
        assert b.width == pytest.approx(0.2)
        assert b.height == pytest.approx(0.4)
        assert b.area == pytest.approx(0.08)
        assert b.center == pytest.approx((0.2, 0.4))

    def test_degenerate_box_allowed(self):
        assert BoundingBox(0.5, 0.5, 0.5, 0.5).area == 0.0

    @pytest.mark.parametrize(
        "coords",
        [(-0.1, 0, 0.5, 0.5), (0, 0, 1.2, 0.5), (0.6, 0, 0.5, 0.5), (0, 0.6, 0.5, 0.5)],
    )
    def test_invalid_box(self, coords):
        with pytest.raises(InvalidBoxError):
            BoundingBox(*coords)

    def test_nan_rejected(self):
        with pytest.raises(InvalidBoxError):
            BoundingBox(float("nan"), 0, 0.5, 0.5)

    @pytest.mark.parametrize("value", [True, 10**400, "0.5", None])
    def test_non_numbers_rejected(self, value):
        with pytest.raises(InvalidBoxError):
            BoundingBox(0.0, 0.0, value, 0.5)

    def test_from_pixels(self):
        b = BoundingBox.from_pixels(64, 36, 128, 72, 640, 360)
        assert b.to_list() == pytest.approx([0.1, 0.1, 0.2, 0.2])

    def test_from_list_wrong_length(self):
        with pytest.raises(InvalidBoxError):
            BoundingBox.from_list([0.1, 0.2, 0.3])

    def test_intersection_and_enclose(self):
        a, b = box(0, 0, 0.2, 0.2), box(0.1, 0.1, 0.3, 0.3)
        assert a.intersection_area(b) == pytest.approx(0.01)
        assert a.intersection_area(box(0.5, 0.5, 0.6, 0.6)) == 0.0
        assert a.enclose(b) == box(0, 0, 0.3, 0.3)


class TestOcrToken:
    def test_blank_text_rejected(self):
        with pytest.raises(InvalidTokenError):
            OcrToken(0, 0, "   ", box(0, 0, 0.1, 0.1))

    def test_negative_ids_rejected(self):
        with pytest.raises(InvalidTokenError):
            OcrToken(-1, 0, "stop", box(0, 0, 0.1, 0.1))
        with pytest.raises(InvalidTokenError):
            OcrToken(0, -1, "stop", box(0, 0, 0.1, 0.1))

    def test_dict_round_trip(self):
        token = OcrToken(3, 7, "m.p.h.", box(0.1, 0.2, 0.3, 0.4))
        assert OcrToken.from_dict(token.to_dict()) == token


# ---------------------------------------------------------------------------
# GroundingAnnotation / Episode
# ---------------------------------------------------------------------------


class TestGroundingAnnotation:
    def test_boxes_inside_segment(self):
        ann = GroundingAnnotation(((3, 7),), {t: box(0, 0, 0.1, 0.1) for t in range(3, 8)})
        assert len(ann.boxes) == 5
        assert ann.contains(3) and ann.contains(7) and not ann.contains(8)
        assert ann.num_segment_frames == 5
        assert ann.last_frame == 7

    def test_box_outside_segment(self):
        with pytest.raises(AnnotationValidationError):
            GroundingAnnotation(((3, 7),), {9: box(0, 0, 0.1, 0.1)})

    def test_overlapping_segments(self):
        with pytest.raises(AnnotationValidationError):
            GroundingAnnotation(((0, 4), (4, 6)))

    def test_inverted_segment(self):
        with pytest.raises(AnnotationValidationError):
            GroundingAnnotation(((5, 2),))


class TestEpisode:
    def test_token_beyond_last_frame(self):
        with pytest.raises(ValidationError):
            make_episode([(6, 0, "stop", box(0, 0, 0.1, 0.1))], num_frames=6)

    def test_annotation_beyond_last_frame(self):
        with pytest.raises(AnnotationValidationError):
            make_episode(annotation=GroundingAnnotation(((4, 8),)), num_frames=6)

    def test_answers_required(self):
        with pytest.raises(ValidationError):
            make_episode(answers=())

    def test_frames_read_only(self):
        ep = make_episode()
        with pytest.raises(ValueError):
            ep.frames[0, 0] = 1.0

    def test_tokens_by_frame_keeps_order(self):
        tokens = [
            (1, 4, "b", box(0, 0, 0.1, 0.1)),
            (0, 2, "a", box(0, 0, 0.1, 0.1)),
            (1, 5, "c", box(0, 0, 0.1, 0.1)),
        ]
        grouped = make_episode(tokens, num_frames=3).tokens_by_frame()
        assert [[t.text for t in f] for f in grouped] == [["a"], ["b", "c"], []]

    def test_check_capacity(self):
        tokens = [(0, i, f"w{i}", box(0, 0, 0.1, 0.1)) for i in range(3)]
        ep = make_episode(tokens)
        ep.check_capacity(3)
        with pytest.raises(ValidationError):
            ep.check_capacity(2)

    def test_without_annotation(self, episode):
        stripped = episode.without_annotation()
        assert stripped.annotation is None
        assert episode.annotation is not None
        assert stripped.ocr == episode.ocr


# ---------------------------------------------------------------------------
# Annotation files
# ---------------------------------------------------------------------------


class TestAnnotationFile:
    def test_single_segment(self, tmp_path):
        path = _write(
            tmp_path / "a.json",
            [
                {
                    "id": "q1",
                    "question": "what?",
                    "answers": ["stop"],
                    "segments": [[3, 7]],
                    "boxes": {str(t): [0.1, 0.1, 0.2, 0.2] for t in range(3, 8)},
                }
            ],
        )
        annotations = load_annotations(path)
        assert list(annotations) == ["q1"]
        assert len(annotations["q1"].boxes) == 5

    def test_box_outside_segment(self, tmp_path):
        path = _write(
            tmp_path / "a.json",
            [
                {
                    "id": "q1",
                    "question": "what?",
                    "answers": ["stop"],
                    "segments": [[3, 7]],
                    "boxes": {"9": [0.1, 0.1, 0.2, 0.2]},
                }
            ],
        )
        with pytest.raises(AnnotationValidationError) as exc:
            load_annotations(path)
        assert exc.value.episode_id == "q1"

    def test_missing_field_names_field_and_episode(self, tmp_path):
        path = _write(tmp_path / "a.json", [{"id": "q7", "question": "what?"}])
        with pytest.raises(AnnotationParseError) as exc:
            read_annotation_file(path)
        assert exc.value.field == "answers"
        assert exc.value.episode_id == "q7"

    def test_bad_segment_type(self, tmp_path):
        path = _write(
            tmp_path / "a.json",
            [{"id": "q1", "question": "?", "answers": ["a"], "segments": [[1, "2"]]}],
        )
        with pytest.raises(AnnotationParseError) as exc:
            read_annotation_file(path)
        assert exc.value.field == "segments"

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "a.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(AnnotationParseError):
            read_annotation_file(path)

    def test_duplicate_ids(self, tmp_path):
        entry = {"id": "q1", "question": "?", "answers": ["a"]}
        path = _write(tmp_path / "a.json", [entry, entry])
        with pytest.raises(AnnotationValidationError):
            read_annotation_file(path)

    def test_pixel_boxes_normalized(self, tmp_path):
        path = _write(
            tmp_path / "a.json",
            [
                {
                    "id": "q1",
                    "question": "?",
                    "answers": ["a"],
                    "segments": [[0, 0]],
                    "frame_size": [200, 100],
                    "boxes": {"0": [20, 10, 40, 30]},
                }
            ],
        )
        ann = load_annotations(path)["q1"]
        assert ann.boxes[0].to_list() == pytest.approx([0.1, 0.1, 0.2, 0.3])

    def test_records_without_segments_have_no_annotation(self, tmp_path):
        path = _write(tmp_path / "a.json", [{"id": "q1", "question": "?", "answers": ["a"]}])
        assert read_annotation_file(path)[0].annotation is None
        assert load_annotations(path) == {}

    def test_round_trip_randomized(self, tmp_path):
        rng = random.Random(5)
        records = []
        for i in range(100):
            segments, boxes, frame = [], {}, 0
            for _ in range(rng.randint(1, 3)):
                start = frame + rng.randint(0, 5)
                end = start + rng.randint(0, 6)
                segments.append((start, end))
                for t in range(start, end + 1):
                    if rng.random() < 0.7:
                        x, y = rng.random() * 0.8, rng.random() * 0.8
                        boxes[t] = box(x, y, x + rng.random() * 0.2, y + rng.random() * 0.2)
                frame = end + 1
            records.append(
                EpisodeRecord(f"ep{i}", "q?", ("a",), GroundingAnnotation(tuple(segments), boxes))
            )
        path = tmp_path / "round.json"
        save_annotations(records, path)
        loaded = load_annotations(path)
        assert loaded == {r.id: r.annotation for r in records}

    def _boxed(self, boxes, **extra):
        return {
            "id": "q1",
            "question": "?",
            "answers": ["a"],
            "segments": [[0, 5]],
            "boxes": boxes,
            **extra,
        }

    def test_duplicate_frame_keys(self, tmp_path):
        boxes = {"3": [0.1, 0.1, 0.2, 0.2], "03": [0.5, 0.5, 0.6, 0.6]}
        path = _write(tmp_path / "a.json", [self._boxed(boxes)])
        with pytest.raises(AnnotationParseError) as exc:
            read_annotation_file(path)
        assert exc.value.field == "boxes"
        assert exc.value.episode_id == "q1"

    @pytest.mark.parametrize("key", ["03", "+3", " 3", "3_0"])
    def test_non_canonical_frame_key(self, tmp_path, key):
        path = _write(tmp_path / "a.json", [self._boxed({key: [0.1, 0.1, 0.2, 0.2]})])
        with pytest.raises(AnnotationParseError):
            read_annotation_file(path)

    def test_repeated_json_key(self, tmp_path):
        path = tmp_path / "a.json"
        path.write_text(
            '{"episodes": [{"id": "q1", "question": "?", "answers": ["a"], "segments": [[0, 5]],'
            ' "boxes": {"3": [0.1, 0.1, 0.2, 0.2], "3": [0.5, 0.5, 0.6, 0.6]}}]}',
            encoding="utf-8",
        )
        with pytest.raises(AnnotationParseError):
            read_annotation_file(path)

    @pytest.mark.parametrize(
        "coords",
        [
            [True, 0.1, 0.2, 0.2],
            [float("nan"), 0.1, 0.2, 0.2],
            [0.1, 0.1, float("inf"), 0.2],
            [0.1, 0.1, 10**400, 0.2],
            ["0.1", 0.1, 0.2, 0.2],
        ],
    )
    def test_non_numeric_coordinates(self, tmp_path, coords):
        path = _write(tmp_path / "a.json", [self._boxed({"2": coords})])
        with pytest.raises(AnnotationParseError):
            read_annotation_file(path)

    @pytest.mark.parametrize("size", [[0, 100], [True, 100], [float("inf"), 100], [200]])
    def test_bad_frame_size(self, tmp_path, size):
        entry = self._boxed({"2": [20, 10, 40, 30]}, frame_size=size)
        with pytest.raises(AnnotationParseError) as exc:
            read_annotation_file(_write(tmp_path / "a.json", [entry]))
        assert exc.value.field == "frame_size"

    def test_mutated_records_load_or_fail_cleanly(self, tmp_path):
        rng = random.Random(11)
        path = tmp_path / "fuzz.json"
        loaded = 0
        for _ in range(600):
            entry = copy.deepcopy(_VALID_RECORD)
            for _ in range(rng.randint(1, 3)):
                rng.choice(_MUTATIONS)(rng, entry)
            _write(path, [entry, {**copy.deepcopy(_VALID_RECORD), "id": "clean"}])
            try:
                records = read_annotation_file(path)
            except ValidationError:
                continue
            loaded += 1
            for record in records:
                if record.annotation is not None:
                    _assert_well_formed(record.annotation)
        assert 0 < loaded < 600


# ---------------------------------------------------------------------------
# Prediction files
# ---------------------------------------------------------------------------


def _grid_result(n_frames=5, n_boxes=5):
    frames = tuple(ScoredFrame(t, 1.0 - 0.1 * t) for t in range(n_frames))
    boxes = {
        t: tuple(
            ScoredToken(
                OcrToken(t, 10 * t + k, f"w{t}{k}", box(0.1 * k, 0.1, 0.1 * k + 0.05, 0.2)),
                0.9 - 0.1 * k,
            )
            for k in range(n_boxes)
        )
        for t in range(n_frames)
    }
    return GroundingResult(frames=frames, boxes=boxes)


class TestPredictionFile:
    def test_empty_map(self, tmp_path):
        path = tmp_path / "p.json"
        save_predictions({}, path)
        assert json.loads(path.read_text())["predictions"] == []
        assert load_predictions(path) == {}

    def test_five_by_five_preserved(self, tmp_path):
        path = tmp_path / "p.json"
        result = _grid_result()
        save_predictions({"q1": Prediction("stop", result)}, path, config_hash="abc", regime="5x5")
        data = json.loads(path.read_text())
        entry = data["predictions"][0]
        assert data["config_hash"] == "abc"
        assert sum(len(v) for v in entry["pred_boxes"].values()) == 25
        assert [b["text"] for b in entry["pred_boxes"]["2"]] == [f"w2{k}" for k in range(5)]

        loaded = load_predictions(path)["q1"]
        assert loaded.answer == "stop"
        assert loaded.grounding == result

    def test_negative_order_round_trip(self, tmp_path):
        path = tmp_path / "p.json"
        result = GroundingResult(
            frames=(ScoredFrame(4, 0.01), ScoredFrame(1, 0.2)),
            order=RankOrder.ASCENDING,
            fallback=True,
        )
        save_predictions({"q1": Prediction("", result)}, path)
        loaded = load_predictions(path)["q1"].grounding
        assert loaded.order is RankOrder.ASCENDING
        assert loaded.fallback is True

    def test_malformed_grounding(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(
            json.dumps(
                {
                    "predictions": [
                        {
                            "id": "q1",
                            "pred_answer": "a",
                            "pred_frames": [{"frame": 0}],
                            "pred_boxes": {},
                        }
                    ]
                }
            )
        )
        with pytest.raises(AnnotationParseError):
            load_predictions(path)


# ---------------------------------------------------------------------------
# GroundingResult
# ---------------------------------------------------------------------------


class TestGroundingResult:
    def test_validate_budgets(self):
        result = _grid_result(3, 3)
        result.validate(3, 3)
        with pytest.raises(ValidationError):
            result.validate(2, 3)
        with pytest.raises(ValidationError):
            result.validate(3, 2)

    def test_validate_order(self):
        bad = GroundingResult(frames=(ScoredFrame(0, 0.1), ScoredFrame(1, 0.5)))
        with pytest.raises(ValidationError):
            bad.validate(5, 5)
        ascending = GroundingResult(
            frames=(ScoredFrame(0, 0.1), ScoredFrame(1, 0.5)), order=RankOrder.ASCENDING
        )
        ascending.validate(5, 5)

    def test_boxes_on_unselected_frame(self):
        token = OcrToken(3, 0, "a", box(0, 0, 0.1, 0.1))
        bad = GroundingResult(frames=(ScoredFrame(0, 1.0),), boxes={3: (ScoredToken(token, 1.0),)})
        with pytest.raises(ValidationError):
            bad.validate(5, 5)

    def test_top_window(self):
        result = _grid_result()
        window = list(result.top(2, 3))
        assert len(window) == 6
        assert [f for f, _ in window] == [0, 0, 0, 1, 1, 1]
        assert result.num_boxes == 25

    def test_frames_sorted_numpy_scores(self):
        frames = tuple(ScoredFrame(i, float(s)) for i, s in enumerate(np.linspace(1, 0, 4)))
        GroundingResult(frames=frames).validate(4, 1)
