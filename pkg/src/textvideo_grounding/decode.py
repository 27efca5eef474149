"""Iterative answer decoder with a vocabulary head and an OCR pointer head.

At step ``t`` the decoder state ``D_t`` attends over the frozen context
``[Q; F_sel; O_sel]`` and over ``D_0..D_t``; context positions never attend
to decoder positions. Each step scores every vocabulary word and every OCR
candidate, and the argmax over the concatenation is emitted.
"""

import logging
import math
import string
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from torch import nn

from .core import AnswerDecoding, DecodedWord, OcrToken, TokenSource
from .exceptions import ConfigError, DecodingError

logger = logging.getLogger(__name__)

PAD, BEGIN, END = "<pad>", "<begin>", "<end>"
RESERVED = (PAD, BEGIN, END)
PAD_ID, BEGIN_ID, END_ID = 0, 1, 2

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_word(word: str) -> str:
    """Case-insensitive, punctuation-stripped form used for target matching."""
    return word.lower().translate(_PUNCT_TABLE).strip()


def answer_words(answer: str) -> list[str]:
    return answer.lower().split()


# -- Vocabulary --------------------------------------------------------------


class Vocabulary:
    """Fixed answer vocabulary with reserved ids ``<pad>``, ``<begin>``, ``<end>``."""

    def __init__(self, words: Iterable[str]) -> None:
        words = [w for w in words if w not in RESERVED]
        self.words: list[str] = [*RESERVED, *words]
        self._ids: dict[str, int] = {}
        for i, w in enumerate(self.words):
            self._ids.setdefault(w, i)
        self._normalized: dict[str, int] = {}
        for i, w in enumerate(self.words[len(RESERVED) :], start=len(RESERVED)):
            key = normalize_word(w)
            if key:
                self._normalized.setdefault(key, i)

    @classmethod
    def build(cls, answers: Iterable[str], size: int) -> "Vocabulary":
        """Most frequent answer words, at most ``size`` entries including reserved ones."""
        if size <= len(RESERVED):
            raise ConfigError(f"must exceed {len(RESERVED)}", "decoder.vocab_size")
        counts: Counter[str] = Counter()
        for answer in answers:
            counts.update(answer_words(answer))
        words = [w for w, _ in counts.most_common(size - len(RESERVED))]
        return cls(words)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        """Read a newline-delimited vocabulary file."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise DecodingError(f"{path}: vocabulary must start with {', '.join(RESERVED)}")
        return cls(lines[len(RESERVED) :])

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("\n".join(self.words) + "\n", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return normalize_word(word) in self._normalized

    def id_of(self, word: str) -> Optional[int]:
        """Id of the entry matching ``word`` after normalization."""
        return self._normalized.get(normalize_word(word))

    def word(self, index: int) -> str:
        return self.words[index]

    @staticmethod
    def is_reserved(index: int) -> bool:
        return index < len(RESERVED)


# -- Configuration -----------------------------------------------------------


@dataclass
class DecoderConfig:
    """Decoder depth, step count and vocabulary cap."""

    layers: int = 3
    steps: int = 12
    vocab_size: int = 5000
    num_heads: int = 12
    dropout: float = 0.1
    use_question: bool = True
    use_frames: bool = True
    use_ocr: bool = True

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError("must be >= 1", "decoder.steps")
        if self.layers < 1:
            raise ConfigError("must be >= 1", "decoder.layers")
        if self.vocab_size <= len(RESERVED):
            raise ConfigError(f"must exceed {len(RESERVED)}", "decoder.vocab_size")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("must be in [0, 1)", "decoder.dropout")


# -- Targets -----------------------------------------------------------------


@dataclass
class AnswerTargets:
    """Multi-label targets of one episode over ``[vocab; OCR candidates]``.

    ``prev_vocab[t]`` / ``prev_ocr[t]`` identify the decoder input at step
    ``t`` (the target word of step ``t-1``); -1 means "not available".
    """

    targets: np.ndarray  # L_a x (V + C)
    step_mask: np.ndarray  # L_a bool
    prev_vocab: np.ndarray  # L_a int
    prev_ocr: np.ndarray  # L_a int
    unanswerable: bool
    unmatched: tuple[str, ...]


def build_targets(
    answers: Sequence[str],
    vocab: Vocabulary,
    candidates: Sequence[Optional[str]],
    steps: int,
    vocab_width: Optional[int] = None,
) -> AnswerTargets:
    """Per-step binary targets for the first answer.

    Both the vocabulary entry and every matching OCR candidate are flagged.
    A word matching neither yields an all-zero row, is skipped as a decoder
    input, and marks the episode unanswerable.

    Args:
        answers: Ground-truth answers; targets use the first one.
        vocab: Answer vocabulary.
        candidates: Text of each OCR candidate, ``None`` for padding.
        steps: Decoding steps ``L_a``.
        vocab_width: Width of the vocabulary block, at least ``len(vocab)``;
            the rows past the vocabulary stay zero.
    """
    v = len(vocab) if vocab_width is None else vocab_width
    if v < len(vocab):
        raise DecodingError(f"Vocabulary block of {v} cannot hold {len(vocab)} words")
    c = len(candidates)
    targets = np.zeros((steps, v + c), dtype=np.float32)
    step_mask = np.zeros(steps, dtype=bool)
    prev_vocab = np.full(steps, -1, dtype=np.int64)
    prev_ocr = np.full(steps, -1, dtype=np.int64)
    prev_vocab[0] = BEGIN_ID

    cand_norm = [normalize_word(x) if x is not None else None for x in candidates]
    words = answer_words(answers[0]) if answers else []
    unmatched: list[str] = []
    for t, word in enumerate(words[:steps]):
        step_mask[t] = True
        key = normalize_word(word)
        vid = vocab.id_of(word)
        if vid is not None:
            targets[t, vid] = 1.0
        hits = [i for i, cand in enumerate(cand_norm) if cand is not None and cand == key and key]
        for i in hits:
            targets[t, v + i] = 1.0
        if vid is None and not hits:
            unmatched.append(word)
        if t + 1 < steps:
            prev_vocab[t + 1] = vid if vid is not None else -1
            prev_ocr[t + 1] = hits[0] if hits else -1
    if len(words) < steps:
        step_mask[len(words)] = True
        targets[len(words), END_ID] = 1.0

    if unmatched:
        logger.debug(f"Answer words without a vocabulary or OCR match: {unmatched}")
    return AnswerTargets(
        targets=targets,
        step_mask=step_mask,
        prev_vocab=prev_vocab,
        prev_ocr=prev_ocr,
        unanswerable=bool(unmatched),
        unmatched=tuple(unmatched),
    )


@dataclass
class TargetBatch:
    """Stacked :class:`AnswerTargets` as tensors."""

    targets: torch.Tensor  # B x L_a x (V + C)
    step_mask: torch.Tensor  # B x L_a bool
    prev_vocab: torch.Tensor  # B x L_a long
    prev_ocr: torch.Tensor  # B x L_a long
    unanswerable: torch.Tensor  # B bool

    @classmethod
    def stack(cls, items: Sequence[AnswerTargets], device: Optional[torch.device] = None):
        def t(arr: list[np.ndarray]) -> torch.Tensor:
            return torch.from_numpy(np.stack(arr)).to(device)

        return cls(
            targets=t([x.targets for x in items]),
            step_mask=t([x.step_mask for x in items]),
            prev_vocab=t([x.prev_vocab for x in items]),
            prev_ocr=t([x.prev_ocr for x in items]),
            unanswerable=torch.tensor([x.unanswerable for x in items], device=device),
        )


# -- Decoder -----------------------------------------------------------------


@dataclass
class DecoderContext:
    """Inputs of one decoder branch; masks mark real rows."""

    question: torch.Tensor  # B x L x d
    question_mask: torch.Tensor
    frames: torch.Tensor  # B x K x d
    frame_mask: torch.Tensor
    ocr: torch.Tensor  # B x C x d
    ocr_mask: torch.Tensor


@dataclass
class DecoderOutput:
    vocab_logits: torch.Tensor  # B x L_a x V
    ocr_logits: torch.Tensor  # B x L_a x C, -inf at padded candidates
    emitted: Optional[torch.Tensor] = None  # B x L_a long, greedy only
    lengths: Optional[torch.Tensor] = None  # B long, greedy only

    @property
    def scores(self) -> torch.Tensor:
        return torch.cat([self.vocab_logits, self.ocr_logits], dim=-1)


class AnswerDecoder(nn.Module):
    """Transformer decoder with a vocabulary classifier and a bilinear pointer.

    The classifier is ``vocab_size`` wide. When the vocabulary holds fewer
    words (``num_words``), the rows past it are never emitted.
    """

    def __init__(
        self, cfg: DecoderConfig, d: int, vocab_size: int, num_words: Optional[int] = None
    ) -> None:
        super().__init__()
        cfg.validate()
        if d % cfg.num_heads != 0:
            raise ConfigError(f"d={d} not divisible by num_heads", "decoder.num_heads")
        num_words = vocab_size if num_words is None else num_words
        if not len(RESERVED) <= num_words <= vocab_size:
            raise ConfigError(
                f"vocabulary of {num_words} words does not fit {vocab_size}", "decoder.vocab_size"
            )
        self.cfg = cfg
        self.d = d
        self.vocab_size = vocab_size
        self.num_words = num_words
        self.question_proj = nn.Linear(d, d)
        self.frame_proj = nn.Linear(d, d)
        self.ocr_proj = nn.Linear(d, d)
        self.step_proj = nn.Linear(d, d)
        self.positions = nn.Embedding(cfg.steps, d)
        self.word_embed = nn.Embedding(vocab_size, d)
        layer = nn.TransformerEncoderLayer(
            d, cfg.num_heads, dim_feedforward=4 * d, dropout=cfg.dropout, batch_first=True
        )
        self.transformer = nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)
        self.vocab_head = nn.Linear(d, vocab_size)
        self.pointer_query = nn.Linear(d, d)
        self.pointer_key = nn.Linear(d, d)

    def _context(self, ctx: DecoderContext) -> tuple[torch.Tensor, torch.Tensor, int, int]:
        # Disabled OCR stays in the sequence fully masked so pointer widths are stable.
        parts, masks = [], []
        streams = (
            (self.cfg.use_question, self.question_proj, ctx.question, ctx.question_mask),
            (self.cfg.use_frames, self.frame_proj, ctx.frames, ctx.frame_mask),
            (True, self.ocr_proj, ctx.ocr, ctx.ocr_mask),
        )
        for enabled, proj, x, m in streams:
            if enabled:
                parts.append(proj(x) * m.unsqueeze(-1).to(x.dtype))
                masks.append(m)
        if not self.cfg.use_ocr:
            masks[-1] = torch.zeros_like(ctx.ocr_mask)
        n_ocr = ctx.ocr.shape[1]
        seq = torch.cat(parts, dim=1)
        return seq, torch.cat(masks, dim=1), seq.shape[1] - n_ocr, n_ocr

    def _step_inputs(
        self,
        prev_vocab: torch.Tensor,
        prev_ocr: torch.Tensor,
        ocr_inputs: torch.Tensor,
    ) -> torch.Tensor:
        b, steps = prev_vocab.shape
        d = self.d
        vocab_in = self.word_embed(prev_vocab.clamp(min=0))
        vocab_in = vocab_in * (prev_vocab >= 0).unsqueeze(-1).to(vocab_in.dtype)
        if ocr_inputs.shape[1] > 0:
            idx = prev_ocr.clamp(min=0).unsqueeze(-1).expand(b, steps, d)
            ocr_in = ocr_inputs.gather(1, idx)
            use_ocr = ((prev_ocr >= 0) & (prev_vocab < 0)).unsqueeze(-1).to(ocr_in.dtype)
            vocab_in = vocab_in + ocr_in * use_ocr
        positions = self.positions.weight[:steps].unsqueeze(0)
        return self.step_proj(vocab_in + positions)

    def run(
        self, ctx: DecoderContext, prev_vocab: torch.Tensor, prev_ocr: torch.Tensor
    ) -> DecoderOutput:
        """One pass over all steps given the decoder input of every step."""
        if not bool(ctx.question_mask.any(dim=-1).all()):
            raise DecodingError("Decoder needs a non-empty question")
        seq, ctx_mask, n_pre, n_ocr = self._context(ctx)
        if not bool(ctx_mask.any(dim=-1).all()):
            raise DecodingError("Every decoder context is empty")
        b, n_ctx, _ = seq.shape
        steps = prev_vocab.shape[1]
        ocr_inputs = seq[:, n_pre : n_pre + n_ocr]
        dec = self._step_inputs(prev_vocab, prev_ocr, ocr_inputs)

        total = n_ctx + steps
        blocked = torch.ones(total, total, dtype=torch.bool, device=seq.device)
        blocked[:, :n_ctx] = False
        blocked[n_ctx:, n_ctx:] = torch.triu(
            torch.ones(steps, steps, dtype=torch.bool, device=seq.device), diagonal=1
        )
        key_valid = torch.cat([ctx_mask, ctx_mask.new_ones(b, steps)], dim=1)
        out = self.transformer(
            torch.cat([seq, dec], dim=1), mask=blocked, src_key_padding_mask=~key_valid
        )
        dec_out = out[:, n_ctx:]
        ocr_out = out[:, n_pre : n_pre + n_ocr]

        vocab_logits = self.vocab_head(dec_out)
        ocr_logits = torch.einsum(
            "bld,bcd->blc", self.pointer_query(dec_out), self.pointer_key(ocr_out)
        ) / math.sqrt(self.d)
        ocr_valid = ctx_mask[:, n_pre : n_pre + n_ocr].unsqueeze(1)
        ocr_logits = ocr_logits.masked_fill(~ocr_valid, float("-inf"))
        return DecoderOutput(vocab_logits, ocr_logits)

    def emittable(self, scores: torch.Tensor) -> torch.Tensor:
        """``scores`` with the unused classifier rows set to ``-inf``."""
        if self.num_words == self.vocab_size:
            return scores
        unused = torch.zeros(scores.shape[-1], dtype=torch.bool, device=scores.device)
        unused[self.num_words : self.vocab_size] = True
        return scores.masked_fill(unused, float("-inf"))

    def teacher_forced(
        self, ctx: DecoderContext, prev_vocab: torch.Tensor, prev_ocr: torch.Tensor
    ) -> DecoderOutput:
        return self.run(ctx, prev_vocab, prev_ocr)

    @torch.no_grad()
    def greedy(self, ctx: DecoderContext) -> DecoderOutput:
        """Argmax decoding for ``cfg.steps`` steps, stopping rows at ``<end>``."""
        b = ctx.question.shape[0]
        steps, v = self.cfg.steps, self.vocab_size
        device = ctx.question.device
        prev_vocab = torch.full((b, steps), -1, dtype=torch.long, device=device)
        prev_ocr = torch.full((b, steps), -1, dtype=torch.long, device=device)
        prev_vocab[:, 0] = BEGIN_ID
        emitted = torch.full((b, steps), -1, dtype=torch.long, device=device)
        lengths = torch.full((b,), steps, dtype=torch.long, device=device)
        done = torch.zeros(b, dtype=torch.bool, device=device)
        vocab_logits = ocr_logits = None

        for t in range(steps):
            out = self.run(ctx, prev_vocab, prev_ocr)
            vocab_logits, ocr_logits = out.vocab_logits, out.ocr_logits
            choice = self.emittable(out.scores[:, t]).argmax(dim=-1)
            emitted[:, t] = torch.where(done, torch.full_like(choice, -1), choice)
            ended = ~done & (choice == END_ID)
            lengths = torch.where(ended, torch.full_like(lengths, t), lengths)
            done = done | ended
            if bool(done.all()):
                break
            if t + 1 < steps:
                is_vocab = choice < v
                prev_vocab[:, t + 1] = torch.where(is_vocab, choice, torch.full_like(choice, -1))
                prev_ocr[:, t + 1] = torch.where(is_vocab, torch.full_like(choice, -1), choice - v)
        return DecoderOutput(vocab_logits, ocr_logits, emitted, lengths)


def decode(
    decoder: AnswerDecoder,
    ctx: DecoderContext,
    vocab: Vocabulary,
    candidates: Sequence[Sequence[Optional[OcrToken]]],
    targets: Optional[TargetBatch] = None,
) -> list[AnswerDecoding]:
    """Decode a batch greedily, or with teacher forcing when ``targets`` is given."""
    if targets is None:
        out = decoder.greedy(ctx)
        emitted = out.emitted
    else:
        out = decoder.teacher_forced(ctx, targets.prev_vocab, targets.prev_ocr)
        emitted = decoder.emittable(out.scores).argmax(dim=-1)
    return to_decodings(out, emitted, vocab, candidates)


def to_decodings(
    out: DecoderOutput,
    emitted: torch.Tensor,
    vocab: Vocabulary,
    candidates: Sequence[Sequence[Optional[OcrToken]]],
) -> list[AnswerDecoding]:
    """Map emitted ids back to words, stopping each row at ``<end>``."""
    v = out.vocab_logits.shape[-1]
    scores = out.scores.detach().cpu().numpy()
    results = []
    for b, row in enumerate(emitted.tolist()):
        words = []
        for idx in row:
            if idx < 0 or idx == END_ID:
                break
            if idx < len(vocab):
                words.append(DecodedWord(vocab.word(idx), TokenSource.VOCAB, idx))
                continue
            if idx < v:
                raise DecodingError(f"Emitted unused vocabulary row {idx}")
            token = candidates[b][idx - v]
            if token is None:
                raise DecodingError(f"Pointer selected padded candidate {idx - v}")
            words.append(DecodedWord(token.text, TokenSource.OCR, idx - v, token))
        results.append(AnswerDecoding(tuple(words), scores[b]))
    return results


def render_answer(dec: AnswerDecoding) -> str:
    """Join emitted words with single spaces, dropping reserved tokens."""
    return " ".join(
        w.text
        for w in dec.words
        if not (w.source is TokenSource.VOCAB and Vocabulary.is_reserved(w.index))
        and w.text not in RESERVED
    )
