"""Seeded synthetic episodes with exact spatio-temporal ground truth.

Each episode asks what is written on one of a few scene objects ("the sign",
"the door", ...). Every object owns a fixed cell of a 3x3 screen grid and a
fixed direction in frame-feature space. One contiguous segment of frames
shows the answer word inside that cell, and the same frames carry the
object's feature direction scaled by ``signal``. Distractor words live in the
other cells with their own lifespans.

An optional OCR corruption pass simulates recognition errors (character
substitutions and drops, such as "chips" read as "hips"), box jitter and
missed detections, without touching the ground truth.
"""

import hashlib
import json
import logging
import statistics
import struct
import string
from collections import Counter
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from tqdm import tqdm

from .core import (
    BoundingBox,
    Episode,
    EpisodeRecord,
    GroundingAnnotation,
    OcrToken,
    read_annotation_file,
    save_annotations,
)
from .exceptions import (
    AnnotationParseError,
    ConfigError,
    DatasetFormatError,
    InfeasibleConfigError,
    ValidationError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FEATURE_MAGIC = b"TVGF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")
MANIFEST_VERSION = 1
GRID = 3

ANSWER_LEXICON = (
    "stop", "exit", "open", "sale", "chips", "pizza", "hotel", "taxi",
    "bank", "cafe", "0.79", "1.25", "35", "99", "free", "push",
    "pull", "bus", "park", "gate", "shell", "menu", "fresh", "milk",
    "bread", "rice", "tea", "gas", "sushi", "books", "lotto", "deli",
)  # fmt: skip
CONTEXT_LEXICON = ("sign", "door", "banner", "shirt", "truck", "window", "price tag", "poster")
QUESTION_TEMPLATES = (
    "what does the {context} say?",
    "what is written on the {context}?",
    "which word appears on the {context}?",
)

_CHARSET = string.ascii_lowercase + string.digits


@dataclass
class OcrNoise:
    """Recognition and detection error rates."""

    char_sub_rate: float = 0.0
    char_drop_rate: float = 0.0
    drop_mode: str = "uniform"
    box_jitter: float = 0.0
    detection_miss_rate: float = 0.0

    def validate(self) -> None:
        for name in ("char_sub_rate", "char_drop_rate", "detection_miss_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError("must be in [0, 1]", f"synth.noise.{name}")
        if not 0.0 <= self.box_jitter <= 1.0:
            raise ConfigError("must be in [0, 1]", "synth.noise.box_jitter")
        if self.drop_mode not in ("uniform", "leading"):
            raise ConfigError("must be 'uniform' or 'leading'", "synth.noise.drop_mode")

    @property
    def is_clean(self) -> bool:
        return not (
            self.char_sub_rate
            or self.char_drop_rate
            or self.box_jitter
            or self.detection_miss_rate
        )


@dataclass
class SynthConfig:
    """Generator dials. ``seed`` fixes the world (object directions)."""

    num_frames: int = 64
    max_tokens_per_frame: int = 15
    visual_dim: int = 1024
    segment_ratio: float = 0.42
    box_area_ratio: float = 0.002
    signal: float = 3.0
    distractors: int = 6
    multi_word_ratio: float = 0.0
    box_drift: float = 0.002
    max_track_id: int = 64
    answer_lexicon: tuple[str, ...] = ANSWER_LEXICON
    context_lexicon: tuple[str, ...] = CONTEXT_LEXICON
    noise: OcrNoise = field(default_factory=OcrNoise)
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if self.num_frames < 1:
            raise ConfigError("must be >= 1", "synth.num_frames")
        if self.max_tokens_per_frame < 1:
            raise ConfigError("must be >= 1", "synth.max_tokens_per_frame")
        if self.visual_dim < 1:
            raise ConfigError("must be >= 1", "synth.visual_dim")
        for name in ("segment_ratio", "multi_word_ratio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("must be in [0, 1]", f"synth.{name}")
        if self.segment_ratio == 0.0:
            raise ConfigError("must be > 0", "synth.segment_ratio")
        if not 0.0 < self.box_area_ratio < 1.0 / GRID**2:
            raise ConfigError(f"must be in (0, {1 / GRID**2:.3f})", "synth.box_area_ratio")
        for name in ("signal", "box_drift"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", f"synth.{name}")
        if not 1 <= len(self.context_lexicon) <= GRID**2:
            raise ConfigError(f"needs 1..{GRID**2} entries", "synth.context_lexicon")
        if self.workers < 1:
            raise ConfigError("must be >= 1", "synth.workers")
        self.noise.validate()

        answer_tokens = 2 if self.multi_word_ratio > 0 else 1
        if self.distractors < 0 or self.distractors > self.max_tokens_per_frame - answer_tokens:
            raise InfeasibleConfigError(
                f"{self.distractors} distractors do not fit {self.max_tokens_per_frame} "
                f"slots next to {answer_tokens} answer token(s)"
            )
        if len(set(self.answer_lexicon)) < self.distractors + answer_tokens:
            raise InfeasibleConfigError("answer lexicon too small for the distractor count")
        if self.max_track_id < self.distractors + answer_tokens:
            raise InfeasibleConfigError("max_track_id too small for distinct track ids")

    @property
    def segment_length(self) -> int:
        return min(self.num_frames, max(1, round(self.segment_ratio * self.num_frames)))


def config_digest(data: Any) -> str:
    """SHA-256 of canonical JSON, truncated to 16 hex characters."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def derive_seed(parent: int, index: int) -> int:
    """Child seed of ``parent`` for item ``index``."""
    digest = hashlib.blake2b(f"{parent}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@lru_cache(maxsize=32)
def _directions(seed: int, count: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, -1))
    basis = rng.standard_normal((count, dim))
    basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    basis.setflags(write=False)
    return basis


def context_directions(cfg: SynthConfig) -> np.ndarray:
    """Unit feature direction of every context object, fixed by ``cfg.seed``."""
    return _directions(cfg.seed, len(cfg.context_lexicon), cfg.visual_dim)


def context_cell(index: int) -> tuple[float, float, float, float]:
    """Screen cell ``(x1, y1, x2, y2)`` owned by context object ``index``."""
    row, col = divmod(index, GRID)
    return (col / GRID, row / GRID, (col + 1) / GRID, (row + 1) / GRID)


# -- Episode generation ------------------------------------------------------


@dataclass(frozen=True)
class SynthTruth:
    """Latent variables behind one generated episode."""

    episode_id: str
    context: str
    cell: int
    answer: str
    segment: tuple[int, int]
    answer_tracks: tuple[int, ...]
    distractor_tracks: tuple[int, ...]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class _Track:
    track_id: int
    text: str
    boxes: dict[int, BoundingBox]


def _box_size(rng: np.random.Generator, cfg: SynthConfig) -> tuple[float, float]:
    # Lognormal area with mean equal to the dial.
    sigma = 0.25
    area = cfg.box_area_ratio * float(np.exp(rng.normal(0.0, sigma) - sigma**2 / 2))
    aspect = float(rng.uniform(1.5, 4.0))
    width = min((area * aspect) ** 0.5, 1.0 / GRID)
    height = min(area / width, 1.0 / GRID)
    return width, height


def _moving_boxes(
    rng: np.random.Generator,
    cfg: SynthConfig,
    cell: tuple[float, float, float, float],
    frames: range,
    size: tuple[float, float],
) -> dict[int, BoundingBox]:
    w, h = size
    cx1, cy1, cx2, cy2 = cell
    x = float(rng.uniform(cx1, max(cx1, cx2 - w)))
    y = float(rng.uniform(cy1, max(cy1, cy2 - h)))
    boxes = {}
    for t in frames:
        x1 = min(max(x, 0.0), 1.0 - w)
        y1 = min(max(y, 0.0), 1.0 - h)
        boxes[t] = BoundingBox(x1, y1, min(x1 + w, 1.0), min(y1 + h, 1.0))
        if cfg.box_drift:
            x += float(rng.normal(0.0, cfg.box_drift))
            y += float(rng.normal(0.0, cfg.box_drift))
    return boxes


def _split_box(box: BoundingBox, parts: int) -> list[BoundingBox]:
    step = box.width / parts
    return [
        BoundingBox(box.x1 + i * step, box.y1, min(box.x1 + (i + 1) * step, box.x2), box.y2)
        for i in range(parts)
    ]


def generate_episode(
    cfg: SynthConfig, seed: int, episode_id: Optional[str] = None
) -> tuple[Episode, SynthTruth]:
    """Generate one annotated episode, reproducible from ``(cfg, seed)``.

    Raises:
        InfeasibleConfigError: The distractors cannot fit next to the answer.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    episode_id = episode_id if episode_id is not None else f"synth-{seed}"
    T = cfg.num_frames

    ctx_index = int(rng.integers(len(cfg.context_lexicon)))
    context = cfg.context_lexicon[ctx_index]
    template = QUESTION_TEMPLATES[int(rng.integers(len(QUESTION_TEMPLATES)))]
    question = template.format(context=context)

    lexicon = list(dict.fromkeys(cfg.answer_lexicon))
    n_answer = 2 if rng.random() < cfg.multi_word_ratio else 1
    words = [lexicon[i] for i in rng.permutation(len(lexicon))]
    answer_words, distractor_words = words[:n_answer], words[n_answer:]
    answer = " ".join(answer_words)

    length = cfg.segment_length
    start = int(rng.integers(0, T - length + 1))
    segment = range(start, start + length)

    picked = rng.choice(cfg.max_track_id, cfg.distractors + n_answer, replace=False)
    tracks = [int(x) for x in picked]
    answer_track_ids, distractor_track_ids = tracks[:n_answer], tracks[n_answer:]

    size = _box_size(rng, cfg)
    enclosing = _moving_boxes(rng, cfg, context_cell(ctx_index), segment, size)
    answer_tracks = [
        _Track(tid, word, {}) for tid, word in zip(answer_track_ids, answer_words)
    ]
    for t, box in enclosing.items():
        for track, part in zip(answer_tracks, _split_box(box, n_answer)):
            track.boxes[t] = part

    other_cells = [c for c in range(GRID**2) if c != ctx_index]
    distractors = []
    for i, tid in enumerate(distractor_track_ids):
        span = int(rng.integers(max(1, T // 4), T + 1))
        first = int(rng.integers(0, T - span + 1))
        cell = other_cells[int(rng.integers(len(other_cells)))]
        boxes = _moving_boxes(
            rng, cfg, context_cell(cell), range(first, first + span), _box_size(rng, cfg)
        )
        distractors.append(_Track(tid, distractor_words[i % len(distractor_words)], boxes))

    ocr: list[OcrToken] = []
    for t in range(T):
        frame_tokens = [
            OcrToken(t, track.track_id, track.text, track.boxes[t])
            for track in (*answer_tracks, *distractors)
            if t in track.boxes
        ]
        for i in rng.permutation(len(frame_tokens)):
            ocr.append(frame_tokens[int(i)])

    frames = rng.standard_normal((T, cfg.visual_dim)).astype(np.float32)
    direction = context_directions(cfg)[ctx_index].astype(np.float32)
    frames[start : start + length] += np.float32(cfg.signal) * direction

    annotation = GroundingAnnotation(
        segments=((start, start + length - 1),), boxes=dict(enclosing)
    )
    episode = Episode(
        id=episode_id,
        question=question,
        frames=frames,
        ocr=tuple(ocr),
        answers=(answer,),
        annotation=annotation,
    )
    truth = SynthTruth(
        episode_id=episode_id,
        context=context,
        cell=ctx_index,
        answer=answer,
        segment=(start, start + length - 1),
        answer_tracks=tuple(answer_track_ids),
        distractor_tracks=tuple(distractor_track_ids),
    )
    return episode, truth


# -- OCR corruption ----------------------------------------------------------


@dataclass(frozen=True)
class CorruptionRecord:
    frame_index: int
    track_id: int
    clean_text: str
    corrupted_text: str
    dropped: bool
    box_shift: tuple[float, float]

    @property
    def changed(self) -> bool:
        return (
            self.dropped
            or self.clean_text != self.corrupted_text
            or self.box_shift != (0.0, 0.0)
        )


@dataclass(frozen=True)
class CorruptionReport:
    records: tuple[CorruptionRecord, ...] = ()

    @property
    def deltas(self) -> tuple[CorruptionRecord, ...]:
        """Records where the token was altered or dropped."""
        return tuple(r for r in self.records if r.changed)

    @property
    def num_dropped(self) -> int:
        return sum(r.dropped for r in self.records)


def _corrupt_text(text: str, noise: OcrNoise, rng: np.random.Generator) -> str:
    chars = list(text)
    if noise.char_drop_rate:
        if noise.drop_mode == "leading":
            if chars and rng.random() < noise.char_drop_rate:
                chars = chars[1:]
        else:
            chars = [c for c in chars if rng.random() >= noise.char_drop_rate]
    if noise.char_sub_rate:
        out = []
        for c in chars:
            if rng.random() < noise.char_sub_rate:
                choices = [x for x in _CHARSET if x != c.lower()]
                c = choices[int(rng.integers(len(choices)))]
            out.append(c)
        chars = out
    return "".join(chars)


def _jitter(box: BoundingBox, amount: float, rng: np.random.Generator):
    if not amount:
        return box, (0.0, 0.0)
    dx, dy = (float(v) for v in rng.uniform(-amount, amount, size=2))
    x1 = min(max(box.x1 + dx, 0.0), 1.0 - box.width)
    y1 = min(max(box.y1 + dy, 0.0), 1.0 - box.height)
    shifted = BoundingBox(x1, y1, min(x1 + box.width, 1.0), min(y1 + box.height, 1.0))
    return shifted, (x1 - box.x1, y1 - box.y1)


def corrupt_ocr(
    episode: Episode, noise: OcrNoise, seed: int
) -> tuple[Episode, CorruptionReport]:
    """Apply recognition and detection errors to an episode's OCR tokens.

    The annotation is carried over unchanged. Tokens whose text becomes empty
    count as dropped.
    """
    noise.validate()
    rng = np.random.default_rng(seed)
    kept: list[OcrToken] = []
    records: list[CorruptionRecord] = []
    for token in episode.ocr:
        if noise.detection_miss_rate and rng.random() < noise.detection_miss_rate:
            records.append(
                CorruptionRecord(
                    token.frame_index, token.track_id, token.text, "", True, (0.0, 0.0)
                )
            )
            continue
        text = _corrupt_text(token.text, noise, rng)
        box, shift = _jitter(token.box, noise.box_jitter, rng)
        dropped = not text.strip()
        records.append(
            CorruptionRecord(token.frame_index, token.track_id, token.text, text, dropped, shift)
        )
        if not dropped:
            kept.append(OcrToken(token.frame_index, token.track_id, text, box))

    report = CorruptionReport(tuple(records))
    logger.debug(
        f"Episode {episode.id}: {len(report.deltas)} corrupted OCR tokens, "
        f"{report.num_dropped} dropped"
    )
    return episode.with_ocr(tuple(kept)), report


# -- Feature files -----------------------------------------------------------


def write_features(path: PathLike, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    t, dim = frames.shape
    Path(path).write_bytes(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, t, dim) + frames.tobytes())


def read_features(path: PathLike) -> np.ndarray:
    """Read a ``T x dim`` float32 feature matrix.

    Raises:
        DatasetFormatError: Bad magic, unknown version or truncated payload.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise DatasetFormatError(f"Cannot read feature file {path}: {e}") from e
    if len(blob) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, t, dim = _HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise DatasetFormatError(f"{path}: unsupported feature version {version}")
    expected = _HEADER.size + 4 * t * dim
    if len(blob) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(t, dim).astype(np.float32)


# -- Splits ------------------------------------------------------------------


@dataclass
class Split:
    """A loaded dataset directory."""

    path: Path
    manifest: dict[str, Any]
    episodes: list[Episode]

    @property
    def name(self) -> str:
        return self.manifest.get("name", self.path.name)

    def by_id(self) -> dict[str, Episode]:
        return {ep.id: ep for ep in self.episodes}

    def records(self) -> dict[str, EpisodeRecord]:
        return {
            ep.id: EpisodeRecord(ep.id, ep.question, ep.answers, ep.annotation)
            for ep in self.episodes
        }


def _make_one(args: tuple[SynthConfig, int, str]) -> tuple[Episode, SynthTruth, CorruptionReport]:
    cfg, seed, episode_id = args
    episode, truth = generate_episode(cfg, seed, episode_id)
    report = CorruptionReport()
    if not cfg.noise.is_clean:
        episode, report = corrupt_ocr(episode, cfg.noise, derive_seed(seed, 1))
    return episode, truth, report


def _dump(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def generate_split(
    cfg: SynthConfig,
    n_episodes: int,
    seed: int,
    out_dir: PathLike,
    name: Optional[str] = None,
    progress: bool = False,
) -> Path:
    """Generate and write a dataset directory.

    Layout: ``manifest.json``, ``annotations.json``, ``ocr.json``,
    ``truth.json`` and ``features/<id>.bin``. Episode ``i`` uses the seed
    ``derive_seed(seed, i)``.

    Raises:
        InfeasibleConfigError: ``cfg`` cannot be satisfied.
        OSError: The directory is not writable.
    """
    cfg.validate()
    if n_episodes < 0:
        raise ConfigError("must be >= 0", "n_episodes")
    out = Path(out_dir)
    name = name or out.name
    (out / "features").mkdir(parents=True, exist_ok=True)

    jobs = [(cfg, derive_seed(seed, i), f"{name}-{i:05d}") for i in range(n_episodes)]
    bar = tqdm(total=n_episodes, desc=f"synth {name}", disable=not progress, leave=False)
    results = []
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for item in pool.map(_make_one, jobs):
            results.append(item)
            bar.update(1)
    bar.close()

    for episode, _, _ in results:
        write_features(out / "features" / f"{episode.id}.bin", episode.frames)
    save_annotations(
        [
            EpisodeRecord(ep.id, ep.question, ep.answers, ep.annotation)
            for ep, _, _ in results
        ],
        out / "annotations.json",
    )
    _dump(
        out / "ocr.json",
        {"episodes": {ep.id: [tok.to_dict() for tok in ep.ocr] for ep, _, _ in results}},
    )
    _dump(out / "truth.json", {"episodes": [truth.to_dict() for _, truth, _ in results]})

    config = asdict(cfg)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "name": name,
        "seed": seed,
        "num_episodes": n_episodes,
        "episode_ids": [ep.id for ep, _, _ in results],
        "config": config,
        "config_hash": config_digest(config),
        "corrupted_tokens": sum(len(r.deltas) for _, _, r in results),
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    _dump(out / "manifest.json", manifest)
    logger.info(f"Wrote {n_episodes} episodes to {out}")
    return out


def load_split(path: PathLike) -> Split:
    """Load a dataset directory written by :func:`generate_split`.

    Raises:
        DatasetFormatError: A required file is missing or malformed.
    """
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        ocr_data = json.loads((root / "ocr.json").read_text(encoding="utf-8"))
    except OSError as e:
        raise DatasetFormatError(f"Incomplete dataset directory {root}: {e}") from e
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{root}: invalid JSON ({e.msg})") from e
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DatasetFormatError(
            f"{root}: unsupported manifest version {manifest.get('format_version')!r}"
        )
    try:
        records = read_annotation_file(root / "annotations.json")
    except OSError as e:
        raise DatasetFormatError(f"Incomplete dataset directory {root}: {e}") from e

    ocr_by_id = ocr_data.get("episodes", {})
    episodes = []
    for record in records:
        try:
            tokens = tuple(OcrToken.from_dict(t) for t in ocr_by_id.get(record.id, []))
        except (KeyError, TypeError, ValueError) as e:
            raise AnnotationParseError(f"malformed OCR token ({e})", "ocr", record.id) from e
        try:
            episode = Episode(
                id=record.id,
                question=record.question,
                frames=read_features(root / "features" / f"{record.id}.bin"),
                ocr=tokens,
                answers=record.answers,
                annotation=record.annotation,
            )
        except ValidationError as e:
            raise DatasetFormatError(f"{root}: episode {record.id}: {e}") from e
        episodes.append(episode)
    logger.debug(f"Loaded {len(episodes)} episodes from {root}")
    return Split(root, manifest, episodes)


# -- Statistics --------------------------------------------------------------


@dataclass
class DatasetStatistics:
    """Summary of a split's grounding geometry."""

    num_episodes: int
    mean_segment_ratio: float
    mean_box_area: float
    median_box_area: float
    mean_tokens_per_frame: float
    segments_per_question: dict[int, int]
    temporal_thirds: dict[str, float]
    quadrants: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def format_table(self) -> str:
        rows = [
            ("episodes", f"{self.num_episodes}"),
            ("segment ratio (mean)", f"{self.mean_segment_ratio:.4f}"),
            ("box area ratio (mean)", f"{self.mean_box_area:.5f}"),
            ("box area ratio (median)", f"{self.median_box_area:.5f}"),
            ("OCR tokens per frame", f"{self.mean_tokens_per_frame:.2f}"),
        ]
        rows += [(f"segments={k}", f"{v}") for k, v in sorted(self.segments_per_question.items())]
        rows += [(f"boxes at {k}", f"{v:.3f}") for k, v in self.temporal_thirds.items()]
        rows += [(f"boxes {k}", f"{v:.3f}") for k, v in self.quadrants.items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def dataset_statistics(episodes: Iterable[Episode]) -> DatasetStatistics:
    """Segment, box-area, temporal and spatial statistics of annotated episodes."""
    seg_ratios: list[float] = []
    areas: list[float] = []
    tokens_per_frame: list[float] = []
    segments: Counter[int] = Counter()
    thirds: Counter[str] = Counter()
    quadrants: Counter[str] = Counter()
    count = 0
    for ep in episodes:
        count += 1
        tokens_per_frame.append(len(ep.ocr) / ep.num_frames)
        ann = ep.annotation
        if ann is None:
            segments[0] += 1
            continue
        segments[len(ann.segments)] += 1
        seg_ratios.append(ann.num_segment_frames / ep.num_frames)
        for frame, box in ann.boxes.items():
            areas.append(box.area)
            third = min(2, frame * 3 // ep.num_frames)
            thirds[("start", "middle", "end")[third]] += 1
            cx, cy = box.center
            row = "top" if cy < 0.5 else "bottom"
            col = "left" if cx < 0.5 else "right"
            quadrants[f"{row}-{col}"] += 1

    n_boxes = max(1, len(areas))
    return DatasetStatistics(
        num_episodes=count,
        mean_segment_ratio=statistics.fmean(seg_ratios) if seg_ratios else 0.0,
        mean_box_area=statistics.fmean(areas) if areas else 0.0,
        median_box_area=statistics.median(areas) if areas else 0.0,
        mean_tokens_per_frame=statistics.fmean(tokens_per_frame) if tokens_per_frame else 0.0,
        segments_per_question=dict(segments),
        temporal_thirds={k: thirds[k] / n_boxes for k in ("start", "middle", "end")},
        quadrants={
            k: quadrants[k] / n_boxes
            for k in ("top-left", "top-right", "bottom-left", "bottom-right")
        },
    )


def generate_episodes(cfg: SynthConfig, n: int, seed: int) -> list[Episode]:
    """In-memory episodes with the same seeding as :func:`generate_split`."""
    return [_make_one((cfg, derive_seed(seed, i), f"synth-{i:05d}"))[0] for i in range(n)]


def answers_of(episodes: Sequence[Episode]) -> list[str]:
    return [a for ep in episodes for a in ep.answers]
