"""Pytest configuration and shared fixtures."""

import sys
from pathlib import Path

# Add src to path for imports
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

# ---------------------------------------------------------------------------
# Shared fixtures
# ---------------------------------------------------------------------------
import numpy as np  # noqa: E402
import pytest  # noqa: E402
import torch  # noqa: E402

from textvideo_grounding.config import OptimizerConfig, RunConfig  # noqa: E402
from textvideo_grounding.core import (  # noqa: E402
    BoundingBox,
    Episode,
    GroundingAnnotation,
    OcrToken,
)
from textvideo_grounding.decode import DecoderConfig  # noqa: E402
from textvideo_grounding.encode import EncoderConfig  # noqa: E402
from textvideo_grounding.ground import GroundingConfig  # noqa: E402
from textvideo_grounding.model import ModelConfig  # noqa: E402
from textvideo_grounding.objective import LossConfig  # noqa: E402
from textvideo_grounding.synth import SynthConfig  # noqa: E402

VISUAL_DIM = 8
NUM_FRAMES = 6
SLOTS = 4


def small_encoder_config(**overrides) -> EncoderConfig:
    values = dict(
        d=16,
        visual_dim=VISUAL_DIM,
        fasttext_dim=12,
        id_embed_dim=6,
        max_question_len=8,
        joint_layers=1,
        num_heads=2,
        dropout=0.0,
        max_frames=16,
        max_tracks=32,
        max_tokens_per_frame=SLOTS,
        word_buckets=97,
        max_sequence=256,
    )
    values.update(overrides)
    return EncoderConfig(**values)


def small_decoder_config(**overrides) -> DecoderConfig:
    values = dict(layers=1, steps=4, vocab_size=64, num_heads=2, dropout=0.0)
    values.update(overrides)
    return DecoderConfig(**values)


def small_synth_config(**overrides) -> SynthConfig:
    values = dict(
        num_frames=NUM_FRAMES,
        max_tokens_per_frame=SLOTS,
        visual_dim=VISUAL_DIM,
        segment_ratio=0.5,
        box_area_ratio=0.01,
        signal=3.0,
        distractors=2,
        max_track_id=16,
    )
    values.update(overrides)
    return SynthConfig(**values)


def small_run_config(**optimizer) -> RunConfig:
    opt = dict(
        lr=1e-3,
        milestones=(1000, 2000),
        batch_size=4,
        max_iterations=6,
        eval_interval=3,
        log_interval=1,
        grad_clip=1.0,
    )
    opt.update(optimizer)
    return RunConfig(
        encoder=small_encoder_config(),
        grounding=GroundingConfig(k1=2, k2=2),
        decoder=small_decoder_config(),
        loss=LossConfig(),
        synth=small_synth_config(),
        optimizer=OptimizerConfig(**opt),
        seed=3,
    )


def box(x1: float, y1: float, x2: float, y2: float) -> BoundingBox:
    return BoundingBox(x1, y1, x2, y2)


def make_episode(
    tokens=(),
    num_frames: int = NUM_FRAMES,
    question: str = "what does the sign say?",
    answers=("stop",),
    annotation=None,
    episode_id: str = "ep-0",
    seed: int = 0,
) -> Episode:
    """Episode with random frame features and ``(frame, track, text, box)`` tokens."""
    rng = np.random.default_rng(seed)
    return Episode(
        id=episode_id,
        question=question,
        frames=rng.standard_normal((num_frames, VISUAL_DIM)).astype(np.float32),
        ocr=tuple(OcrToken(f, tr, text, b) for f, tr, text, b in tokens),
        answers=tuple(answers),
        annotation=annotation,
    )


def planted_episode(episode_id: str = "planted", seed: int = 0) -> Episode:
    """``stop`` in the centre of frames 2..4 plus two distractors on every frame."""
    answer_box = box(0.4, 0.4, 0.5, 0.45)
    tokens = []
    for t in range(NUM_FRAMES):
        if 2 <= t <= 4:
            tokens.append((t, 1, "stop", answer_box))
        tokens.append((t, 2, "exit", box(0.05, 0.05, 0.15, 0.1)))
        tokens.append((t, 3, "sale", box(0.7, 0.8, 0.9, 0.85)))
    annotation = GroundingAnnotation(segments=((2, 4),), boxes={t: answer_box for t in (2, 3, 4)})
    return make_episode(tokens, annotation=annotation, episode_id=episode_id, seed=seed)


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def encoder_cfg() -> EncoderConfig:
    return small_encoder_config()


@pytest.fixture
def model_cfg() -> ModelConfig:
    return ModelConfig(
        encoder=small_encoder_config(),
        grounding=GroundingConfig(k1=2, k2=2),
        decoder=small_decoder_config(),
    )


@pytest.fixture
def synth_cfg() -> SynthConfig:
    return small_synth_config()


@pytest.fixture
def run_cfg() -> RunConfig:
    return small_run_config()


@pytest.fixture
def episode() -> Episode:
    return planted_episode()
