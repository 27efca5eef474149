"""Training losses: contrastive agreement between branches plus multi-label BCE."""

import logging
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .exceptions import ConfigError, ObjectiveError

logger = logging.getLogger(__name__)


@dataclass
class LossConfig:
    tau: float = 0.1
    lam: float = 100.0
    anchor_bce: bool = False

    def validate(self) -> None:
        if self.tau <= 0:
            raise ConfigError("must be > 0", "loss.tau")
        if self.lam < 0:
            raise ConfigError("must be >= 0", "loss.lam")


def answer_repr(
    vocab_logits: torch.Tensor,
    ocr_logits: torch.Tensor,
    slots: torch.Tensor,
    total_slots: int,
    step_mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Flattened per-step probabilities over ``[vocab; OCR slot grid]``.

    The OCR block is scattered into a grid of ``total_slots`` positions so that
    branches with different candidate sets share one width; unused slots and
    steps outside ``step_mask`` carry zero mass.

    Args:
        vocab_logits: ``B x L_a x V``.
        ocr_logits: ``B x L_a x C`` (-inf at padded candidates).
        slots: ``B x C`` grid position of each candidate, -1 for padding.
        total_slots: Grid size (``T * S``).
        step_mask: ``B x L_a`` steps to keep.

    Returns:
        ``B x (L_a * (V + total_slots))``.
    """
    b, steps, _ = vocab_logits.shape
    used = slots >= 0
    ocr_probs = torch.sigmoid(ocr_logits) * used.unsqueeze(1).to(vocab_logits.dtype)
    index = slots.clamp(min=0).unsqueeze(1).expand(b, steps, slots.shape[1])
    grid = vocab_logits.new_zeros(b, steps, total_slots).scatter_add(-1, index, ocr_probs)
    probs = torch.cat([torch.sigmoid(vocab_logits), grid], dim=-1)
    if step_mask is not None:
        probs = probs * step_mask.unsqueeze(-1).to(probs.dtype)
    return probs.reshape(b, -1)


def cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise ObjectiveError("Zero-norm answer representation")
    return (a * b).sum(dim=-1) / (na * nb)


def contrastive_loss(
    y_pos: torch.Tensor, y_anchor: torch.Tensor, y_neg: torch.Tensor, tau: float = 0.1
) -> torch.Tensor:
    """InfoNCE with one positive and one negative, averaged over the batch.

    ``-log(e^{s+/tau} / (e^{s+/tau} + e^{s-/tau}))`` with ``s+- = cos(Y+-, Y)``,
    evaluated through ``logsumexp``.
    """
    if not (y_pos.shape == y_anchor.shape == y_neg.shape):
        raise ObjectiveError(
            f"Representation widths differ: {tuple(y_pos.shape)}, "
            f"{tuple(y_anchor.shape)}, {tuple(y_neg.shape)}"
        )
    s_pos = cosine(y_pos, y_anchor) / tau
    s_neg = cosine(y_neg, y_anchor) / tau
    loss = torch.logsumexp(torch.stack([s_pos, s_neg], dim=-1), dim=-1) - s_pos
    return loss.mean()


def bce_loss(
    logits: torch.Tensor, targets: torch.Tensor, mask: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Mean binary cross-entropy over unmasked cells.

    Masked cells may hold ``-inf`` logits; they are replaced before the loss
    is evaluated so they contribute neither value nor gradient.
    """
    if logits.shape != targets.shape:
        raise ObjectiveError(
            f"Score shape {tuple(logits.shape)} != target shape {tuple(targets.shape)}"
        )
    if mask is None:
        mask = torch.ones_like(targets, dtype=torch.bool)
    elif mask.shape != targets.shape:
        raise ObjectiveError(f"Mask shape {tuple(mask.shape)} != {tuple(targets.shape)}")
    safe = torch.where(mask, logits, torch.zeros_like(logits))
    cells = F.binary_cross_entropy_with_logits(safe, targets.to(logits.dtype), reduction="none")
    count = mask.sum()
    if int(count) == 0:
        return (safe * 0).sum()
    return (cells * mask.to(cells.dtype)).sum() / count


def total_loss(bce: torch.Tensor, cons: torch.Tensor, lam: float) -> torch.Tensor:
    return bce + lam * cons
