"""Question, frame and OCR-token representations plus joint contextualization.

Everything here is batched over a leading ``B`` dimension. Episodes are padded
to a common frame count ``T`` and per-frame token capacity ``S`` by
:func:`collate`; boolean masks mark real entries and padded rows are exactly
zero after every stage.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import nn

from .core import Episode, OcrToken
from .exceptions import ConfigError, EncodingError
from .phoc import PHOC_DIM, phoc_encode
from .providers import (
    HashedWordVectors,
    IdentityVisualProvider,
    LearnedQuestionEmbedding,
    ProviderKind,
    ProviderRegistry,
    tokenize,
)

logger = logging.getLogger(__name__)

__all__ = [
    "EncoderConfig",
    "EpisodeBatch",
    "EncodedEpisode",
    "EpisodeEncoder",
    "FrameEmbedding",
    "OcrEmbedding",
    "JointEncoder",
    "QuestionPooling",
    "collate",
    "masked_softmax",
    "tokenize",
]


@dataclass
class EncoderConfig:
    """Widths and table sizes of the encoder."""

    d: int = 768
    visual_dim: int = 1024
    fasttext_dim: int = 300
    phoc_dim: int = PHOC_DIM
    id_embed_dim: int = 50
    max_question_len: int = 20
    joint_layers: int = 2
    num_heads: int = 12
    dropout: float = 0.1
    max_frames: int = 128
    max_tracks: int = 256
    max_tokens_per_frame: int = 15
    word_buckets: int = 2**15
    max_sequence: int = 2048
    use_word_vec: bool = True
    use_phoc: bool = True
    use_box: bool = True
    use_temporal_id: bool = True
    use_track_id: bool = True

    def validate(self) -> None:
        for name in (
            "d",
            "visual_dim",
            "fasttext_dim",
            "id_embed_dim",
            "max_question_len",
            "num_heads",
            "max_frames",
            "max_tracks",
            "max_tokens_per_frame",
            "max_sequence",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError("must be positive", f"encoder.{name}")
        if self.phoc_dim != PHOC_DIM:
            raise ConfigError(f"must be {PHOC_DIM}", "encoder.phoc_dim")
        if self.joint_layers < 0:
            raise ConfigError("must be >= 0", "encoder.joint_layers")
        if self.word_buckets < 2:
            raise ConfigError("must be >= 2", "encoder.word_buckets")
        if self.d % self.num_heads != 0:
            raise ConfigError(f"d={self.d} not divisible by num_heads", "encoder.num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("must be in [0, 1)", "encoder.dropout")


def default_providers(cfg: EncoderConfig) -> ProviderRegistry:
    """Registry with the hash-bucketed toy providers."""
    registry = ProviderRegistry()
    registry.register(
        ProviderKind.QUESTION,
        LearnedQuestionEmbedding(cfg.word_buckets, cfg.d, cfg.max_question_len),
        cfg.d,
    )
    registry.register(
        ProviderKind.WORD, HashedWordVectors(cfg.word_buckets, cfg.fasttext_dim), cfg.fasttext_dim
    )
    registry.register(ProviderKind.VISUAL, IdentityVisualProvider(cfg.visual_dim), cfg.visual_dim)
    return registry


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax over unmasked entries; masked entries (and fully masked rows) get 0."""
    filled = logits.masked_fill(~mask, torch.finfo(logits.dtype).min)
    return torch.where(mask, filled.softmax(dim), torch.zeros_like(logits))


# -- Batching ----------------------------------------------------------------


@dataclass
class EpisodeBatch:
    """Padded tensors for a list of episodes.

    ``tokens[b][t][s]`` is the OCR token stored in slot ``s`` of frame ``t``
    (``None`` for padding), so grounding indices can be mapped back to tokens.
    """

    episode_ids: list[str]
    questions: list[str]
    question_ids: torch.Tensor  # B x L long
    question_mask: torch.Tensor  # B x L bool
    visual: torch.Tensor  # B x T x V
    frame_mask: torch.Tensor  # B x T bool
    ocr_word_ids: torch.Tensor  # B x T x S long
    ocr_phoc: torch.Tensor  # B x T x S x 604
    ocr_boxes: torch.Tensor  # B x T x S x 4
    ocr_tracks: torch.Tensor  # B x T x S long
    ocr_mask: torch.Tensor  # B x T x S bool
    tokens: list[list[list[Optional[OcrToken]]]] = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.visual.shape[0]

    @property
    def num_frames(self) -> int:
        return self.visual.shape[1]

    @property
    def slots(self) -> int:
        return self.ocr_mask.shape[2]

    def to(
        self, device: Optional[torch.device] = None, dtype: Optional[torch.dtype] = None
    ) -> "EpisodeBatch":
        """Move tensors to a device and cast floating tensors to ``dtype``."""

        def move(t: torch.Tensor) -> torch.Tensor:
            if dtype is not None and t.is_floating_point():
                t = t.to(dtype)
            return t.to(device) if device is not None else t

        return EpisodeBatch(
            episode_ids=self.episode_ids,
            questions=self.questions,
            question_ids=move(self.question_ids),
            question_mask=move(self.question_mask),
            visual=move(self.visual),
            frame_mask=move(self.frame_mask),
            ocr_word_ids=move(self.ocr_word_ids),
            ocr_phoc=move(self.ocr_phoc),
            ocr_boxes=move(self.ocr_boxes),
            ocr_tracks=move(self.ocr_tracks),
            ocr_mask=move(self.ocr_mask),
            tokens=self.tokens,
        )


def collate(
    episodes: Sequence[Episode],
    providers: ProviderRegistry,
    max_tokens_per_frame: int,
    num_frames: Optional[int] = None,
) -> EpisodeBatch:
    """Pad a list of episodes into an :class:`EpisodeBatch`.

    Args:
        episodes: Episodes to batch; annotations are never read.
        providers: Registry whose question and word providers assign ids.
        max_tokens_per_frame: Slot capacity ``S`` of every frame.
        num_frames: Pad to this frame count instead of the batch maximum.

    Raises:
        ValidationError: A frame holds more than ``max_tokens_per_frame`` tokens.
        EncodingError: Episodes disagree on the visual width.
    """
    if not episodes:
        raise EncodingError("Cannot collate an empty episode list")
    widths = {ep.visual_dim for ep in episodes}
    if len(widths) != 1:
        raise EncodingError(f"Episodes have mixed visual widths {sorted(widths)}")
    visual_dim = widths.pop()
    n_frames = max(ep.num_frames for ep in episodes)
    if num_frames is not None:
        if num_frames < n_frames:
            raise EncodingError(f"Cannot pad {n_frames} frames down to {num_frames}")
        n_frames = num_frames
    b, s = len(episodes), max_tokens_per_frame

    question_ids = []
    question_mask = []
    visual = np.zeros((b, n_frames, visual_dim), dtype=np.float32)
    frame_mask = np.zeros((b, n_frames), dtype=bool)
    word_ids = np.zeros((b, n_frames, s), dtype=np.int64)
    phoc = np.zeros((b, n_frames, s, PHOC_DIM), dtype=np.float32)
    boxes = np.zeros((b, n_frames, s, 4), dtype=np.float32)
    tracks = np.zeros((b, n_frames, s), dtype=np.int64)
    ocr_mask = np.zeros((b, n_frames, s), dtype=bool)
    grids: list[list[list[Optional[OcrToken]]]] = []

    for i, ep in enumerate(episodes):
        ep.check_capacity(s)
        ids, mask = providers.question.encode_question(ep.question)
        question_ids.append(ids)
        question_mask.append(mask)
        visual[i, : ep.num_frames] = ep.frames
        frame_mask[i, : ep.num_frames] = True
        grid: list[list[Optional[OcrToken]]] = [[None] * s for _ in range(n_frames)]
        for t, frame_tokens in enumerate(ep.tokens_by_frame()):
            for slot, token in enumerate(frame_tokens):
                grid[t][slot] = token
                word_ids[i, t, slot] = providers.word.index(token.text)
                phoc[i, t, slot] = phoc_encode(token.text)
                boxes[i, t, slot] = token.box.to_list()
                tracks[i, t, slot] = token.track_id
                ocr_mask[i, t, slot] = True
        grids.append(grid)

    return EpisodeBatch(
        episode_ids=[ep.id for ep in episodes],
        questions=[ep.question for ep in episodes],
        question_ids=torch.stack(question_ids),
        question_mask=torch.stack(question_mask),
        visual=torch.from_numpy(visual),
        frame_mask=torch.from_numpy(frame_mask),
        ocr_word_ids=torch.from_numpy(word_ids),
        ocr_phoc=torch.from_numpy(phoc),
        ocr_boxes=torch.from_numpy(boxes),
        ocr_tracks=torch.from_numpy(tracks),
        ocr_mask=torch.from_numpy(ocr_mask),
        tokens=grids,
    )


# -- Embeddings --------------------------------------------------------------


def _check_ids(ids: torch.Tensor, limit: int, what: str) -> None:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= limit):
        raise EncodingError(f"{what} id {int(ids.max())} outside table of size {limit}")


class FrameEmbedding(nn.Module):
    """``f_t = LayerNorm(W1 visual_t + W2 temb(t))``."""

    def __init__(self, cfg: EncoderConfig, temporal: nn.Embedding) -> None:
        super().__init__()
        self.cfg = cfg
        self.temporal = temporal
        self.visual_proj = nn.Linear(cfg.visual_dim, cfg.d)
        self.id_proj = nn.Linear(cfg.id_embed_dim, cfg.d)
        self.norm = nn.LayerNorm(cfg.d)

    def forward(self, visual: torch.Tensor, frame_ids: torch.Tensor) -> torch.Tensor:
        if visual.shape[-1] != self.cfg.visual_dim:
            raise EncodingError(
                f"Visual width {visual.shape[-1]} does not match {self.cfg.visual_dim}"
            )
        _check_ids(frame_ids, self.cfg.max_frames, "Frame")
        h = self.visual_proj(visual)
        if self.cfg.use_temporal_id:
            h = h + self.id_proj(self.temporal(frame_ids))
        return self.norm(h)

    def embed_frame(self, visual: torch.Tensor, t: int) -> torch.Tensor:
        """Embed a single frame vector at temporal index ``t``."""
        ids = torch.tensor([t], dtype=torch.long, device=visual.device)
        return self.forward(visual.unsqueeze(0), ids)[0]


class OcrEmbedding(nn.Module):
    """``o = LN(W3 word + W4 phoc + W5 temb(t) + W6 tremb(track)) + LN(W7 box)``.

    The box term has its own LayerNorm with independent affine parameters.
    Disabled features contribute a zero term.
    """

    def __init__(self, cfg: EncoderConfig, temporal: nn.Embedding) -> None:
        super().__init__()
        self.cfg = cfg
        self.temporal = temporal
        self.tracks = nn.Embedding(cfg.max_tracks, cfg.id_embed_dim)
        self.word_proj = nn.Linear(cfg.fasttext_dim, cfg.d)
        self.phoc_proj = nn.Linear(cfg.phoc_dim, cfg.d)
        self.time_proj = nn.Linear(cfg.id_embed_dim, cfg.d)
        self.track_proj = nn.Linear(cfg.id_embed_dim, cfg.d)
        self.box_proj = nn.Linear(4, cfg.d)
        self.text_norm = nn.LayerNorm(cfg.d)
        self.box_norm = nn.LayerNorm(cfg.d)

    def forward(
        self,
        word_vecs: torch.Tensor,
        phoc: torch.Tensor,
        frame_ids: torch.Tensor,
        track_ids: torch.Tensor,
        boxes: torch.Tensor,
    ) -> torch.Tensor:
        _check_ids(track_ids, self.cfg.max_tracks, "Track")
        _check_ids(frame_ids, self.cfg.max_frames, "Frame")
        shape = (*boxes.shape[:-1], self.cfg.d)
        text = boxes.new_zeros(shape)
        if self.cfg.use_word_vec:
            text = text + self.word_proj(word_vecs)
        if self.cfg.use_phoc:
            text = text + self.phoc_proj(phoc)
        if self.cfg.use_temporal_id:
            text = text + self.time_proj(self.temporal(frame_ids))
        if self.cfg.use_track_id:
            text = text + self.track_proj(self.tracks(track_ids))
        out = self.text_norm(text)
        if self.cfg.use_box:
            out = out + self.box_norm(self.box_proj(boxes))
        return out

    def embed_ocr(self, token: OcrToken, word_vec: torch.Tensor) -> torch.Tensor:
        """Embed one token given its word vector."""
        dtype, device = word_vec.dtype, word_vec.device
        return self.forward(
            word_vec,
            torch.as_tensor(phoc_encode(token.text), dtype=dtype, device=device),
            torch.tensor(token.frame_index, device=device),
            torch.tensor(token.track_id, device=device),
            torch.tensor(token.box.to_list(), dtype=dtype, device=device),
        )


class JointEncoder(nn.Module):
    """Transformer over the concatenated ``[Q; F; flattened O]`` sequence."""

    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.layers: Optional[nn.TransformerEncoder] = None
        if cfg.joint_layers > 0:
            layer = nn.TransformerEncoderLayer(
                cfg.d,
                cfg.num_heads,
                dim_feedforward=4 * cfg.d,
                dropout=cfg.dropout,
                batch_first=True,
            )
            self.layers = nn.TransformerEncoder(
                layer, cfg.joint_layers, enable_nested_tensor=False
            )

    def forward(
        self,
        question: torch.Tensor,
        question_mask: torch.Tensor,
        frames: torch.Tensor,
        frame_mask: torch.Tensor,
        ocr: torch.Tensor,
        ocr_mask: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        b, t, s, d = ocr.shape
        lq = question.shape[1]
        length = lq + t + t * s
        if length > self.cfg.max_sequence:
            raise EncodingError(
                f"Joint sequence of {length} positions exceeds max_sequence={self.cfg.max_sequence}"
            )
        if self.layers is None:
            return question, frames, ocr

        seq = torch.cat([question, frames, ocr.reshape(b, t * s, d)], dim=1)
        valid = torch.cat([question_mask, frame_mask, ocr_mask.reshape(b, t * s)], dim=1)
        out = self.layers(seq, src_key_padding_mask=~valid)
        out = out * valid.unsqueeze(-1).to(out.dtype)
        return (
            out[:, :lq],
            out[:, lq : lq + t],
            out[:, lq + t :].reshape(b, t, s, d),
        )


class QuestionPooling(nn.Module):
    """``q_g = sum_l softmax_l(W8 q_l) q_l`` over unmasked words."""

    def __init__(self, d: int) -> None:
        super().__init__()
        self.score = nn.Linear(d, 1)

    def forward(
        self, question: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Pool ``B x L x d`` word features.

        Returns:
            ``(q_g, weights)`` of shapes ``B x d`` and ``B x L``.

        Raises:
            EncodingError: A question has no unmasked word.
        """
        if not bool(mask.any(dim=-1).all()):
            raise EncodingError("Cannot pool a fully masked question")
        weights = masked_softmax(self.score(question).squeeze(-1), mask)
        return torch.einsum("bl,bld->bd", weights, question), weights


# -- Full encoder ------------------------------------------------------------


@dataclass
class EncodedEpisode:
    """Jointly contextualized question, frame and OCR features with masks."""

    question: torch.Tensor  # B x L x d
    question_mask: torch.Tensor
    frames: torch.Tensor  # B x T x d
    frame_mask: torch.Tensor
    ocr: torch.Tensor  # B x T x S x d
    ocr_mask: torch.Tensor


class EpisodeEncoder(nn.Module):
    """Embeds a batch and runs the joint encoder."""

    def __init__(self, cfg: EncoderConfig, providers: Optional[ProviderRegistry] = None) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.providers = providers if providers is not None else default_providers(cfg)
        self.temporal = nn.Embedding(cfg.max_frames, cfg.id_embed_dim)
        self.frame_embed = FrameEmbedding(cfg, self.temporal)
        self.ocr_embed = OcrEmbedding(cfg, self.temporal)
        self.joint = JointEncoder(cfg)

    def embed_question(self, text: str) -> tuple[torch.Tensor, torch.Tensor]:
        """``L x d`` question matrix and its mask (padded rows zero)."""
        ids, mask = self.providers.question.encode_question(text)
        q = self.providers.question(ids)
        return q * mask.unsqueeze(-1).to(q.dtype), mask

    def word_vec(self, text: str) -> torch.Tensor:
        provider = self.providers.word
        return provider(torch.tensor(provider.index(text)))

    def embed(self, batch: EpisodeBatch) -> EncodedEpisode:
        """Per-stream embeddings before joint contextualization."""
        q_mask = batch.question_mask
        question = self.providers.question(batch.question_ids)
        question = question * q_mask.unsqueeze(-1).to(question.dtype)

        b, t = batch.frame_mask.shape
        frame_ids = torch.arange(t, device=batch.visual.device).expand(b, t)
        visual = self.providers.visual(batch.visual)
        frames = self.frame_embed(visual, frame_ids)
        frames = frames * batch.frame_mask.unsqueeze(-1).to(frames.dtype)

        s = batch.slots
        ocr_frame_ids = frame_ids.unsqueeze(-1).expand(b, t, s)
        word_vecs = self.providers.word(batch.ocr_word_ids).to(batch.ocr_phoc.dtype)
        ocr = self.ocr_embed(
            word_vecs, batch.ocr_phoc, ocr_frame_ids, batch.ocr_tracks, batch.ocr_boxes
        )
        ocr = ocr * batch.ocr_mask.unsqueeze(-1).to(ocr.dtype)
        return EncodedEpisode(question, q_mask, frames, batch.frame_mask, ocr, batch.ocr_mask)

    def forward(self, batch: EpisodeBatch) -> EncodedEpisode:
        e = self.embed(batch)
        question, frames, ocr = self.joint(
            e.question, e.question_mask, e.frames, e.frame_mask, e.ocr, e.ocr_mask
        )
        return EncodedEpisode(question, e.question_mask, frames, e.frame_mask, ocr, e.ocr_mask)

