"""Answer and grounding evaluation: Acc, ANLS, IoU hit rate and GQA."""

import logging
import re
import statistics
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Optional

import Levenshtein

from .core import BoundingBox, Episode, EpisodeRecord, GroundingAnnotation, GroundingResult
from .exceptions import ConfigError, MetricsError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.3, 0.5)
ANLS_THRESHOLD = 0.5

_SPACE_RE = re.compile(r"\s+")


def normalize_answer(text: str) -> str:
    """Lowercase, trim and collapse internal whitespace."""
    return _SPACE_RE.sub(" ", text.strip().lower())


def exact_match(pred: str, answers: Sequence[str]) -> int:
    norm = normalize_answer(pred)
    return int(any(norm == normalize_answer(a) for a in answers))


def anls(pred: str, answers: Sequence[str], threshold: float = ANLS_THRESHOLD) -> float:
    """Best normalized Levenshtein similarity, zeroed below ``threshold``."""
    best = 0.0
    p = normalize_answer(pred)
    for answer in answers:
        a = normalize_answer(answer)
        longest = max(len(p), len(a))
        similarity = 1.0 if longest == 0 else 1.0 - Levenshtein.distance(p, a) / longest
        best = max(best, similarity)
    return best if best >= threshold else 0.0


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; zero-area boxes score 0."""
    inter = a.intersection_area(b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def grounding_hit(
    pred: GroundingResult,
    gt: Optional[GroundingAnnotation],
    k_t: int,
    k_s: int,
    tau: float,
) -> tuple[int, float]:
    """Whether the top ``k_t x k_s`` window contains a box with IoU >= ``tau``.

    Predicted frames without a ground-truth box contribute IoU 0.

    Returns:
        ``(hit, best_iou)``.
    """
    best = 0.0
    if gt is not None:
        for frame, scored in pred.top(k_t, k_s):
            gt_box = gt.box_for(frame)
            if gt_box is not None:
                best = max(best, box_iou(scored.token.box, gt_box))
    return int(best >= tau), best


@dataclass(frozen=True)
class Regime:
    """Top ``k_t`` frames by top ``k_s`` boxes."""

    k_t: int
    k_s: int

    def __post_init__(self) -> None:
        if self.k_t < 1 or self.k_s < 1:
            raise ConfigError(f"Regime sizes must be >= 1, got {self.k_t}x{self.k_s}", "regime")

    @classmethod
    def parse(cls, text: str) -> "Regime":
        """Parse ``"5x5"``-style strings."""
        match = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
        if not match:
            raise ConfigError(f"Expected '<k_t>x<k_s>', got {text!r}", "regime")
        return cls(int(match.group(1)), int(match.group(2)))

    def __str__(self) -> str:
        return f"{self.k_t}x{self.k_s}"


TOP_1X1 = Regime(1, 1)
TOP_5X5 = Regime(5, 5)


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    pred: str
    exact: int
    anls: float
    best_iou: float
    hits: Mapping[float, int]


@dataclass
class MetricReport:
    """Aggregate metrics of a split under one regime.

    Percentages lie in ``[0, 100]``; ANLS and mean IoU in ``[0, 1]``.
    """

    regime: Regime
    acc: float
    anls: float
    iou_hit_rate: dict[float, float]
    gqa: dict[float, float]
    mean_iou: float
    records: list[QuestionRecord] = field(default_factory=list)

    @property
    def num_questions(self) -> int:
        return len(self.records)

    def to_dict(self, include_records: bool = False) -> dict[str, Any]:
        data: dict[str, Any] = {
            "regime": str(self.regime),
            "questions": self.num_questions,
            "acc": round(self.acc, 2),
            "anls": round(self.anls, 4),
            "mean_iou": round(self.mean_iou, 4),
        }
        for tau, value in self.iou_hit_rate.items():
            data[f"iou@{tau}"] = round(value, 2)
        for tau, value in self.gqa.items():
            data[f"gqa@{tau}"] = round(value, 2)
        if include_records:
            data["records"] = [
                {
                    "id": r.id,
                    "pred": r.pred,
                    "exact": r.exact,
                    "anls": r.anls,
                    "best_iou": r.best_iou,
                    "hits": {str(k): v for k, v in r.hits.items()},
                }
                for r in self.records
            ]
        return data

    def format_table(self) -> str:
        """Aligned two-row text table."""
        summary = self.to_dict()
        keys = [k for k in summary if k not in ("questions",)]
        cells = [str(summary[k]) for k in keys]
        widths = [max(len(k), len(c)) for k, c in zip(keys, cells)]
        header = "  ".join(k.ljust(w) for k, w in zip(keys, widths))
        row = "  ".join(c.ljust(w) for c, w in zip(cells, widths))
        return f"{header}\n{row}"


def _percent(values: Sequence[int]) -> float:
    return 100.0 * sum(values) / len(values) if values else 0.0


def evaluate(
    preds: Mapping[str, Any],
    gts: Mapping[str, EpisodeRecord],
    regime: Regime,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> MetricReport:
    """Score predictions against ground truth.

    Args:
        preds: Episode id to an object with ``answer`` and ``grounding``.
        gts: Episode id to its record (answers plus annotation).
        regime: Candidate window for grounding hits.
        thresholds: IoU thresholds of the hit rate and GQA.

    Raises:
        MetricsError: Some prediction ids have no ground truth.
    """
    missing = sorted(set(preds) - set(gts))
    if missing:
        raise MetricsError(f"No ground truth for {len(missing)} prediction(s): {missing[:10]}")

    records = []
    for episode_id, pred in preds.items():
        gt = gts[episode_id]
        exact = exact_match(pred.answer, gt.answers)
        hits = {}
        best = 0.0
        for tau in thresholds:
            hit, best = grounding_hit(pred.grounding, gt.annotation, regime.k_t, regime.k_s, tau)
            hits[tau] = hit
        records.append(
            QuestionRecord(
                id=episode_id,
                pred=pred.answer,
                exact=exact,
                anls=anls(pred.answer, gt.answers),
                best_iou=best,
                hits=hits,
            )
        )

    report = MetricReport(
        regime=regime,
        acc=_percent([r.exact for r in records]),
        anls=statistics.fmean(r.anls for r in records) if records else 0.0,
        iou_hit_rate={tau: _percent([r.hits[tau] for r in records]) for tau in thresholds},
        gqa={tau: _percent([r.exact * r.hits[tau] for r in records]) for tau in thresholds},
        mean_iou=statistics.fmean(r.best_iou for r in records) if records else 0.0,
        records=records,
    )
    logger.debug(f"Evaluated {len(records)} questions under Top {regime}")
    return report


# -- OCR ceiling -------------------------------------------------------------


@dataclass
class UpperBoundReport:
    """Best achievable scores given the detected OCR tokens."""

    acc: float
    iou_hit_rate: dict[float, float]
    num_questions: int

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"questions": self.num_questions, "acc": round(self.acc, 2)}
        for tau, value in self.iou_hit_rate.items():
            data[f"iou@{tau}"] = round(value, 2)
        return data


def _ocr_strings(episode: Episode) -> set[str]:
    strings = set()
    for tokens in episode.tokens_by_frame():
        texts = [normalize_answer(t.text) for t in tokens]
        strings.update(texts)
        strings.update(f"{a} {b}" for a in texts for b in texts if a != b)
    return strings


def upper_bound(
    episodes: Iterable[Episode], thresholds: Sequence[float] = DEFAULT_THRESHOLDS
) -> UpperBoundReport:
    """Exhaustive search over every OCR token of every episode.

    A question is answerable when any token (or ordered pair of tokens in one
    frame) matches an answer exactly, and groundable at ``tau`` when any token
    box reaches IoU ``tau`` with the annotated box of its frame.
    """
    qa_hits: list[int] = []
    ground_hits: dict[float, list[int]] = {tau: [] for tau in thresholds}
    for ep in episodes:
        strings = _ocr_strings(ep)
        qa_hits.append(int(any(normalize_answer(a) in strings for a in ep.answers)))
        best = 0.0
        if ep.annotation is not None:
            for token in ep.ocr:
                gt_box = ep.annotation.box_for(token.frame_index)
                if gt_box is not None:
                    best = max(best, box_iou(token.box, gt_box))
        for tau in thresholds:
            ground_hits[tau].append(int(best >= tau))
    return UpperBoundReport(
        acc=_percent(qa_hits),
        iou_hit_rate={tau: _percent(v) for tau, v in ground_hits.items()},
        num_questions=len(qa_hits),
    )
