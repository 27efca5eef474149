"""Composed network: encode, ground, then decode three branches.

The anchor branch decodes from every frame and OCR token, the positive
branch from the grounded selection and the negative branch from the
anti-grounded one. Training ties them together with the contrastive loss;
inference only runs the positive branch.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import torch
from torch import nn

from .core import AnswerDecoding, Episode, GroundingResult, OcrToken
from .decode import (
    AnswerDecoder,
    DecoderConfig,
    DecoderContext,
    DecoderOutput,
    TargetBatch,
    Vocabulary,
    build_targets,
    render_answer,
    to_decodings,
)
from .encode import EncodedEpisode, EncoderConfig, EpisodeBatch, EpisodeEncoder, collate
from .ground import BranchSelection, GroundingConfig, GroundingOutput, TemporalSpatialGrounder
from .objective import LossConfig, answer_repr, bce_loss, contrastive_loss, total_loss
from .providers import ProviderRegistry

logger = logging.getLogger(__name__)


class Branch(Enum):
    ANCHOR = "anchor"
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    grounding: GroundingConfig = field(default_factory=GroundingConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def validate(self) -> None:
        self.encoder.validate()
        self.grounding.validate()
        self.decoder.validate()


@dataclass
class BranchInputs:
    """Decoder context of one branch plus the candidate bookkeeping."""

    context: DecoderContext
    slots: torch.Tensor  # B x C position in the T x S grid, -1 unused
    candidates: list[list[Optional[OcrToken]]]


@dataclass
class LossBreakdown:
    total: torch.Tensor
    bce: torch.Tensor
    cons: torch.Tensor
    anchor_bce: Optional[torch.Tensor]
    unanswerable: int

    def as_floats(self) -> dict[str, float]:
        parts = {"total": self.total, "bce": self.bce, "cons": self.cons}
        if self.anchor_bce is not None:
            parts["anchor_bce"] = self.anchor_bce
        return {k: float(v.detach()) for k, v in parts.items()}


@dataclass
class EpisodePrediction:
    """Inference output for one episode."""

    episode_id: str
    answer: str
    decoding: AnswerDecoding
    grounding: GroundingResult
    negative: GroundingResult


class GroundedQAModel(nn.Module):
    """Encoder, grounder and answer decoder trained end to end."""

    def __init__(
        self,
        cfg: ModelConfig,
        vocab: Vocabulary,
        providers: Optional[ProviderRegistry] = None,
    ) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        self.encoder = EpisodeEncoder(cfg.encoder, providers)
        self.grounder = TemporalSpatialGrounder(cfg.encoder.d, cfg.grounding)
        self.decoder = AnswerDecoder(cfg.decoder, cfg.encoder.d, cfg.decoder.vocab_size, len(vocab))

    @property
    def slots_per_frame(self) -> int:
        return self.cfg.encoder.max_tokens_per_frame

    def collate(self, episodes: Sequence[Episode]) -> EpisodeBatch:
        # Annotations are dropped before anything reaches the network.
        stripped = [ep.without_annotation() for ep in episodes]
        return collate(stripped, self.encoder.providers, self.slots_per_frame)

    def ground(
        self,
        batch: EpisodeBatch,
        generator: Optional[torch.Generator] = None,
        noise: Optional[bool] = None,
    ) -> tuple[EncodedEpisode, GroundingOutput]:
        encoded = self.encoder(batch)
        return encoded, self.grounder(encoded, generator, noise)

    # -- Branch construction -------------------------------------------------

    def anchor_inputs(self, encoded: EncodedEpisode, batch: EpisodeBatch) -> BranchInputs:
        b, t, s, d = encoded.ocr.shape
        mask = encoded.ocr_mask.reshape(b, t * s)
        grid = torch.arange(t * s, device=mask.device).expand(b, t * s)
        ctx = DecoderContext(
            encoded.question,
            encoded.question_mask,
            encoded.frames,
            encoded.frame_mask,
            encoded.ocr.reshape(b, t * s, d),
            mask,
        )
        candidates = [[tok for frame in tokens for tok in frame] for tokens in batch.tokens]
        return BranchInputs(ctx, torch.where(mask, grid, torch.full_like(grid, -1)), candidates)

    def branch_inputs(
        self, encoded: EncodedEpisode, sel: BranchSelection, batch: EpisodeBatch
    ) -> BranchInputs:
        s = batch.slots
        ctx = DecoderContext(
            encoded.question,
            encoded.question_mask,
            sel.frames,
            sel.frame_selected,
            sel.tokens,
            sel.token_selected,
        )
        frames, slots, chosen = (
            sel.token_frame.tolist(),
            sel.token_slot.tolist(),
            sel.token_selected.tolist(),
        )
        candidates = [
            [grid[t][k] if used else None for t, k, used in zip(frames[b], slots[b], chosen[b])]
            for b, grid in enumerate(batch.tokens)
        ]
        return BranchInputs(ctx, sel.flat_slots(s), candidates)

    def targets_for(
        self, inputs: BranchInputs, answers: Sequence[Sequence[str]], device: torch.device
    ) -> TargetBatch:
        items = [
            build_targets(
                ans,
                self.vocab,
                [tok.text if tok is not None else None for tok in cands],
                self.cfg.decoder.steps,
                self.decoder.vocab_size,
            )
            for ans, cands in zip(answers, inputs.candidates)
        ]
        return TargetBatch.stack(items, device)

    def _teacher_forced(self, inputs: BranchInputs, targets: TargetBatch) -> DecoderOutput:
        return self.decoder.teacher_forced(inputs.context, targets.prev_vocab, targets.prev_ocr)

    def _bce(self, out: DecoderOutput, inputs: BranchInputs, targets: TargetBatch) -> torch.Tensor:
        v = out.vocab_logits.shape[-1]
        steps = targets.step_mask.unsqueeze(-1)
        words = torch.arange(v, device=steps.device) < self.decoder.num_words
        cand = inputs.context.ocr_mask.unsqueeze(1)
        cells = torch.cat([steps & words, steps & cand], dim=-1)
        return bce_loss(out.scores, targets.targets, cells)

    # -- Training ------------------------------------------------------------

    def compute_losses(
        self,
        episodes: Sequence[Episode],
        loss_cfg: LossConfig,
        generator: Optional[torch.Generator] = None,
        dtype: Optional[torch.dtype] = None,
    ) -> LossBreakdown:
        """Losses of the three teacher-forced branches on a batch."""
        param = next(self.parameters())
        device = param.device
        batch = self.collate(episodes).to(device, dtype or param.dtype)
        answers = [ep.answers for ep in episodes]
        encoded, grounding = self.ground(batch, generator)

        anchor = self.anchor_inputs(encoded, batch)
        positive = self.branch_inputs(encoded, grounding.positive, batch)
        negative = self.branch_inputs(encoded, grounding.negative, batch)

        total_slots = batch.num_frames * batch.slots
        runs = {}
        for branch, inputs in (
            (Branch.ANCHOR, anchor),
            (Branch.POSITIVE, positive),
            (Branch.NEGATIVE, negative),
        ):
            targets = self.targets_for(inputs, answers, device)
            runs[branch] = (self._teacher_forced(inputs, targets), inputs, targets)

        # Step masks depend only on the answer, so every branch shares one.
        step_mask = runs[Branch.POSITIVE][2].step_mask
        vecs = {
            branch: answer_repr(
                out.vocab_logits, out.ocr_logits, inputs.slots, total_slots, step_mask
            )
            for branch, (out, inputs, _) in runs.items()
        }
        cons = contrastive_loss(
            vecs[Branch.POSITIVE], vecs[Branch.ANCHOR], vecs[Branch.NEGATIVE], loss_cfg.tau
        )
        bce = self._bce(*runs[Branch.POSITIVE])
        anchor_bce = self._bce(*runs[Branch.ANCHOR]) if loss_cfg.anchor_bce else None
        objective = bce if anchor_bce is None else bce + anchor_bce
        return LossBreakdown(
            total=total_loss(objective, cons, loss_cfg.lam),
            bce=bce,
            cons=cons,
            anchor_bce=anchor_bce,
            unanswerable=int(runs[Branch.POSITIVE][2].unanswerable.sum()),
        )

    # -- Inference -----------------------------------------------------------

    @torch.no_grad()
    def predict(self, episodes: Sequence[Episode]) -> list[EpisodePrediction]:
        """Greedy answers and groundings with noise-free argmax selection."""
        param = next(self.parameters())
        was_training = self.training
        self.eval()
        try:
            batch = self.collate(episodes).to(param.device, param.dtype)
            encoded, grounding = self.ground(batch, None, noise=False)
            positive = self.branch_inputs(encoded, grounding.positive, batch)
            out = self.decoder.greedy(positive.context)
        finally:
            self.train(was_training)
        decodings = to_decodings(out, out.emitted, self.vocab, positive.candidates)
        results = grounding.to_results(batch.tokens)
        return [
            EpisodePrediction(
                episode_id=ep.id,
                answer=render_answer(dec),
                decoding=dec,
                grounding=pos,
                negative=neg,
            )
            for ep, dec, (pos, neg) in zip(episodes, decodings, results)
        ]
