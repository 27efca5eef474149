"""Contrastive temporal-to-spatial grounding.

The temporal stage scores every frame against the pooled question with two
independent attention heads (positive and negative relevance), draws a
per-frame two-way Gumbel-Softmax choice, and keeps up to ``K1`` frames of each
class. The spatial stage repeats score, mask and filter over the OCR tokens
of each kept frame and keeps up to ``K2`` tokens per frame.

Selections keep the straight-through mask value as a multiplicative weight
on the gathered features, so gradients reach both scorers even though the
forward pass only sees hard one-hot choices.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import torch
from torch import nn

from .core import GroundingResult, OcrToken, RankOrder, ScoredFrame, ScoredToken
from .encode import EncodedEpisode, QuestionPooling, masked_softmax
from .exceptions import ConfigError, GroundingError

logger = logging.getLogger(__name__)

_EPS = 1e-10


@dataclass
class GroundingConfig:
    """Selection budgets and Gumbel-Softmax settings."""

    k1: int = 5
    k2: int = 5
    gumbel_temperature: float = 1.0
    hard_selection: bool = True
    noise: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.k1 < 1:
            raise ConfigError("must be >= 1", "grounding.k1")
        if self.k2 < 1:
            raise ConfigError("must be >= 1", "grounding.k2")
        if self.gumbel_temperature <= 0:
            raise ConfigError("must be > 0", "grounding.gumbel_temperature")


@dataclass
class SelectionScores:
    """Relevance distributions and the sampled selection mask."""

    pos: torch.Tensor  # B x N
    neg: torch.Tensor  # B x N
    mask: torch.Tensor  # B x N x 2
    valid: torch.Tensor  # B x N bool


# -- Scoring -----------------------------------------------------------------


class ContrastiveScorer(nn.Module):
    """Two independent cross-attention heads between items and ``q_g``.

    ``pos = softmax((W9 x) . (W10 q_g))`` and ``neg`` likewise with ``W11``
    and ``W12``. The query projections carry no bias, so scaling ``q_g``
    scales the logits.
    """

    def __init__(self, d: int) -> None:
        super().__init__()
        self.pos_key = nn.Linear(d, d)
        self.pos_query = nn.Linear(d, d, bias=False)
        self.neg_key = nn.Linear(d, d)
        self.neg_query = nn.Linear(d, d, bias=False)

    def logits(self, items: torch.Tensor, q_g: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pos = torch.einsum("bnd,bd->bn", self.pos_key(items), self.pos_query(q_g))
        neg = torch.einsum("bnd,bd->bn", self.neg_key(items), self.neg_query(q_g))
        return pos, neg

    def forward(
        self, items: torch.Tensor, q_g: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        pos, neg = self.logits(items, q_g)
        return masked_softmax(pos, mask), masked_softmax(neg, mask)


def score_frames(
    scorer: ContrastiveScorer, frames: torch.Tensor, q_g: torch.Tensor, mask: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Positive and negative frame distributions, each summing to 1 over valid frames."""
    return scorer(frames, q_g, mask)


# -- Gumbel-Softmax mask -----------------------------------------------------


def sample_gumbel(
    shape: torch.Size,
    generator: Optional[torch.Generator],
    dtype: torch.dtype,
    device: torch.device,
) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype, device=device)
    return -torch.log(-torch.log(u.clamp(_EPS, 1.0 - _EPS)))


def contrastive_mask(
    pos: torch.Tensor,
    neg: torch.Tensor,
    temperature: float = 1.0,
    hard: bool = True,
    generator: Optional[torch.Generator] = None,
    noise: bool = True,
) -> torch.Tensor:
    """Per-item two-way Gumbel-Softmax over ``[pos_t, neg_t]``.

    Args:
        pos: Positive scores, ``... x N``.
        neg: Negative scores of the same shape.
        temperature: Softmax temperature of the relaxed sample.
        hard: Emit exact one-hot rows with straight-through gradients.
        generator: Seeded noise stream; ``None`` uses the global RNG.
        noise: Add Gumbel noise. Without noise the hard choice is the argmax.

    Returns:
        ``... x N x 2`` mask whose rows sum to 1. Column 0 selects positive.
    """
    logits = torch.stack([pos, neg], dim=-1)
    if noise:
        logits = logits + sample_gumbel(logits.shape, generator, logits.dtype, logits.device)
    y_soft = (logits / temperature).softmax(dim=-1)
    if not hard:
        return y_soft
    index = y_soft.argmax(dim=-1, keepdim=True)
    y_hard = torch.zeros_like(y_soft).scatter_(-1, index, 1.0)
    # Value is exactly y_hard; gradient is that of y_soft.
    return y_hard + (y_soft - y_soft.detach())


# -- Ranked selection --------------------------------------------------------


@dataclass
class Selection:
    """Top-k items of one class, padded to a common width.

    ``index`` positions past the selected count point at item 0 and are
    cleared in ``selected``.
    """

    index: torch.Tensor  # B x K long
    selected: torch.Tensor  # B x K bool
    scores: torch.Tensor  # B x K
    weight: torch.Tensor  # B x K, straight-through selection weight
    fallback: torch.Tensor  # B bool


def select_ranked(
    scores: torch.Tensor,
    member: torch.Tensor,
    weight: torch.Tensor,
    valid: torch.Tensor,
    k: int,
    descending: bool,
) -> Selection:
    """Rank class members by score and keep at most ``k``.

    Ties break towards the lower index. A row with valid items but no member
    falls back to ranking every valid item; its weight is replaced by a
    straight-through constant 1.
    """
    candidates = member & valid
    has_member = candidates.any(dim=-1)
    fallback = ~has_member & valid.any(dim=-1)
    eligible = torch.where(fallback.unsqueeze(-1), valid, candidates)

    fill = float("-inf") if descending else float("inf")
    key = scores.detach().masked_fill(~eligible, fill)
    order = torch.sort(key, dim=-1, descending=descending, stable=True).indices
    width = min(k, scores.shape[-1])
    index = order[:, :width]
    selected = eligible.gather(1, index)

    fixed = weight + (1.0 - weight).detach()
    weight = torch.where(fallback.unsqueeze(-1), fixed, weight)
    return Selection(
        index=torch.where(selected, index, torch.zeros_like(index)),
        selected=selected,
        scores=scores.gather(1, index) * selected.to(scores.dtype),
        weight=weight.gather(1, index) * selected.to(weight.dtype),
        fallback=fallback,
    )


def filter_frames(
    scores: SelectionScores, k1: int, bypass: Union[bool, torch.Tensor] = False
) -> tuple[Selection, Selection]:
    """Split items into ranked positive and negative selections.

    Positives are items whose mask picks column 0, ranked by ``pos``
    descending; negatives pick column 1 and are ranked by ``neg`` ascending.
    Rows flagged by ``bypass`` (a bool, or one bool per row) keep every valid
    item in both classes with weight 1.
    """
    m = scores.mask
    chose_pos = m[..., 0] >= m[..., 1]
    skip = torch.as_tensor(bypass, device=m.device).expand(scores.pos.shape[:-1]).unsqueeze(-1)
    ones = torch.ones_like(scores.pos)
    member_pos = torch.where(skip, scores.valid, chose_pos)
    member_neg = torch.where(skip, scores.valid, ~chose_pos)
    weight_pos = torch.where(skip, ones, m[..., 0])
    weight_neg = torch.where(skip, ones, m[..., 1])
    positive = select_ranked(scores.pos, member_pos, weight_pos, scores.valid, k1, True)
    negative = select_ranked(scores.neg, member_neg, weight_neg, scores.valid, k1, False)
    return positive, negative


# -- Grounder ----------------------------------------------------------------


@dataclass
class BranchSelection:
    """Grounded (or anti-grounded) frames and OCR tokens of one branch.

    Tokens are laid out frame-major: candidate ``c`` belongs to selected frame
    ``c // K2`` and keeps the spatial rank ``c % K2`` within it.
    """

    frame_index: torch.Tensor  # B x K1 long
    frame_selected: torch.Tensor  # B x K1 bool
    frame_scores: torch.Tensor  # B x K1
    frames: torch.Tensor  # B x K1 x d
    token_frame: torch.Tensor  # B x C long, -1 where unused
    token_slot: torch.Tensor  # B x C long, -1 where unused
    token_selected: torch.Tensor  # B x C bool
    token_scores: torch.Tensor  # B x C
    tokens: torch.Tensor  # B x C x d
    fallback: torch.Tensor  # B bool
    order: RankOrder

    @property
    def num_candidates(self) -> int:
        return self.tokens.shape[1]

    def flat_slots(self, slots_per_frame: int) -> torch.Tensor:
        """Candidate position in the ``T x S`` slot grid, -1 where unused."""
        flat = self.token_frame * slots_per_frame + self.token_slot
        return torch.where(self.token_selected, flat, torch.full_like(flat, -1))

    def to_results(self, token_grid: list[list[list[Optional[OcrToken]]]]) -> list[GroundingResult]:
        """Convert to one :class:`GroundingResult` per batch row."""
        frames_idx = self.frame_index.tolist()
        frames_sel = self.frame_selected.tolist()
        frames_score = self.frame_scores.detach().tolist()
        tok_frame = self.token_frame.tolist()
        tok_slot = self.token_slot.tolist()
        tok_sel = self.token_selected.tolist()
        tok_score = self.token_scores.detach().tolist()
        results = []
        for b, grid in enumerate(token_grid):
            frames = [
                ScoredFrame(t, score)
                for t, sel, score in zip(frames_idx[b], frames_sel[b], frames_score[b])
                if sel
            ]
            boxes: dict[int, list[ScoredToken]] = {f.index: [] for f in frames}
            for t, s, sel, score in zip(tok_frame[b], tok_slot[b], tok_sel[b], tok_score[b]):
                if not sel:
                    continue
                token = grid[t][s]
                if token is None:
                    raise GroundingError(f"Selected slot ({t}, {s}) holds no OCR token")
                boxes[t].append(ScoredToken(token, score))
            results.append(
                GroundingResult(
                    frames=tuple(frames),
                    boxes={t: tuple(v) for t, v in boxes.items() if v},
                    order=self.order,
                    fallback=bool(self.fallback[b]),
                )
            )
        return results


@dataclass
class GroundingOutput:
    """Both branches plus the temporal scores they were drawn from."""

    q_g: torch.Tensor
    frame_scores: SelectionScores
    positive: BranchSelection
    negative: BranchSelection

    def to_results(
        self, token_grid: list[list[list[Optional[OcrToken]]]]
    ) -> list[tuple[GroundingResult, GroundingResult]]:
        return list(zip(self.positive.to_results(token_grid), self.negative.to_results(token_grid)))


class TemporalSpatialGrounder(nn.Module):
    """Pools the question, then grounds frames and their OCR tokens.

    The spatial scorer is shared across frames.
    """

    def __init__(self, d: int, cfg: GroundingConfig) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.pooling = QuestionPooling(d)
        self.temporal = ContrastiveScorer(d)
        self.spatial = ContrastiveScorer(d)

    def new_generator(self, seed: Optional[int] = None) -> torch.Generator:
        gen = torch.Generator()
        gen.manual_seed(self.cfg.seed if seed is None else seed)
        return gen

    def _mask(
        self,
        pos: torch.Tensor,
        neg: torch.Tensor,
        generator: Optional[torch.Generator],
        noise: bool,
    ) -> torch.Tensor:
        if noise and generator is not None and pos.device.type != "cpu":
            # Noise is drawn on CPU so the stream does not depend on the device.
            g = sample_gumbel((*pos.shape, 2), generator, pos.dtype, torch.device("cpu"))
            logits = torch.stack([pos, neg], dim=-1) + g.to(pos.device)
            return contrastive_mask(
                logits[..., 0],
                logits[..., 1],
                self.cfg.gumbel_temperature,
                self.cfg.hard_selection,
                noise=False,
            )
        return contrastive_mask(
            pos, neg, self.cfg.gumbel_temperature, self.cfg.hard_selection, generator, noise
        )

    def ground_spatial(
        self,
        frame_tokens: torch.Tensor,
        token_mask: torch.Tensor,
        q_g: torch.Tensor,
        generator: Optional[torch.Generator] = None,
        noise: bool = True,
        bypass: bool = False,
    ) -> tuple[Selection, Selection]:
        """Select up to ``K2`` positive and negative tokens per frame.

        Args:
            frame_tokens: ``N x S x d`` tokens of ``N`` frames.
            token_mask: ``N x S`` validity mask.
            q_g: ``N x d`` pooled question, one row per frame.
        """
        pos, neg = self.spatial(frame_tokens, q_g, token_mask)
        mask = self._mask(pos, neg, generator, noise)
        scores = SelectionScores(pos, neg, mask, token_mask)
        return filter_frames(scores, self.cfg.k2, bypass=bypass)

    def _branch(
        self,
        encoded: EncodedEpisode,
        frames: Selection,
        q_g: torch.Tensor,
        use_positive: bool,
        generator: Optional[torch.Generator],
        noise: bool,
    ) -> BranchSelection:
        b, t, s, d = encoded.ocr.shape
        k1 = frames.index.shape[1]
        frame_feats = encoded.frames.gather(1, frames.index.unsqueeze(-1).expand(b, k1, d))
        frame_weight = frames.weight * frames.selected.to(frames.weight.dtype)
        frame_feats = frame_feats * frame_weight.unsqueeze(-1)

        tok_idx = frames.index.view(b, k1, 1, 1).expand(b, k1, s, d)
        tokens = encoded.ocr.gather(1, tok_idx)
        tok_mask = encoded.ocr_mask.gather(1, frames.index.unsqueeze(-1).expand(b, k1, s))
        tok_mask = tok_mask & frames.selected.unsqueeze(-1)

        pos_sel, neg_sel = self.ground_spatial(
            tokens.reshape(b * k1, s, d),
            tok_mask.reshape(b * k1, s),
            q_g.repeat_interleave(k1, dim=0),
            generator,
            noise,
            bypass=self.cfg.k2 >= s,
        )
        sel = pos_sel if use_positive else neg_sel
        k2 = sel.index.shape[1]
        flat_tokens = tokens.reshape(b * k1, s, d)
        chosen = flat_tokens.gather(1, sel.index.unsqueeze(-1).expand(b * k1, k2, d))
        weight = sel.weight * frame_weight.reshape(b * k1, 1)
        chosen = chosen * weight.unsqueeze(-1)

        token_frame = frames.index.unsqueeze(-1).expand(b, k1, k2).reshape(b, k1 * k2)
        token_selected = sel.selected.reshape(b, k1 * k2)
        unused = torch.full_like(token_frame, -1)
        return BranchSelection(
            frame_index=frames.index,
            frame_selected=frames.selected,
            frame_scores=frames.scores,
            frames=frame_feats,
            token_frame=torch.where(token_selected, token_frame, unused),
            token_slot=torch.where(token_selected, sel.index.reshape(b, k1 * k2), unused),
            token_selected=token_selected,
            token_scores=sel.scores.reshape(b, k1 * k2),
            tokens=chosen.reshape(b, k1 * k2, d),
            fallback=frames.fallback,
            order=RankOrder.DESCENDING if use_positive else RankOrder.ASCENDING,
        )

    def forward(
        self,
        encoded: EncodedEpisode,
        generator: Optional[torch.Generator] = None,
        noise: Optional[bool] = None,
    ) -> GroundingOutput:
        """Run temporal then spatial grounding on an encoded batch.

        Args:
            encoded: Output of the joint encoder.
            generator: Gumbel noise stream.
            noise: Override ``cfg.noise`` (evaluation passes ``False``).
        """
        noise = self.cfg.noise if noise is None else noise
        if not bool(encoded.frame_mask.any(dim=-1).all()):
            raise GroundingError("Every episode needs at least one frame")
        q_g, _ = self.pooling(encoded.question, encoded.question_mask)
        pos, neg = score_frames(self.temporal, encoded.frames, q_g, encoded.frame_mask)
        mask = self._mask(pos, neg, generator, noise)
        scores = SelectionScores(pos, neg, mask, encoded.frame_mask)
        # Short episodes keep every frame, whatever the padded batch width.
        bypass = encoded.frame_mask.sum(-1) <= self.cfg.k1
        positive, negative = filter_frames(scores, self.cfg.k1, bypass=bypass)

        if bool(positive.fallback.any()):
            logger.debug(f"Temporal fallback on {int(positive.fallback.sum())} episode(s)")
        return GroundingOutput(
            q_g=q_g,
            frame_scores=scores,
            positive=self._branch(encoded, positive, q_g, True, generator, noise),
            negative=self._branch(encoded, negative, q_g, False, generator, noise),
        )


def ground(
    grounder: TemporalSpatialGrounder,
    encoded: EncodedEpisode,
    seed: Optional[int] = None,
    noise: Optional[bool] = None,
) -> GroundingOutput:
    """Ground a batch with a freshly seeded noise stream."""
    return grounder(encoded, grounder.new_generator(seed), noise)
