"""Training loop, evaluation loop and checkpoints.

A checkpoint stores everything needed to continue a run bit-for-bit on the
same platform: parameters, optimizer and scheduler state, the batch sampler
position and every random stream (python, numpy, torch, Gumbel noise).
"""

import logging
import math
import pickle
import random
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import torch
from tqdm import tqdm

from .config import RunConfig, config_from_dict, config_hash
from .core import Episode, Prediction
from .decode import Vocabulary
from .detection import select_device
from .exceptions import (
    CheckpointError,
    ConfigMismatchError,
    DatasetError,
    TrainingDivergedError,
)
from .metrics import TOP_1X1, MetricReport, Regime, evaluate
from .model import EpisodePrediction, GroundedQAModel, LossBreakdown
from .synth import Split, answers_of, derive_seed

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_VERSION = 1
BEST_NAME = "best.pt"
LAST_NAME = "last.pt"


# -- Checkpoints -------------------------------------------------------------


@dataclass
class Checkpoint:
    """Versioned training state."""

    config_hash: str
    config: dict[str, Any]
    vocab: list[str]
    model_state: dict[str, Any]
    optimizer_state: Optional[dict[str, Any]] = None
    scheduler_state: Optional[dict[str, Any]] = None
    iteration: int = 0
    rng: dict[str, Any] = field(default_factory=dict)
    sampler: dict[str, Any] = field(default_factory=dict)
    history: list[dict[str, Any]] = field(default_factory=list)
    best_acc: float = -1.0
    format_version: int = CHECKPOINT_VERSION

    def run_config(self) -> RunConfig:
        return config_from_dict(self.config)

    def build_model(self) -> GroundedQAModel:
        cfg = self.run_config()
        model = GroundedQAModel(cfg.model, Vocabulary(self.vocab))
        model.load_state_dict(self.model_state)
        model.eval()
        return model


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(ckpt.__dict__, tmp)
    tmp.replace(path)
    logger.debug(f"Saved checkpoint at iteration {ckpt.iteration} to {path}")
    return path


def load_checkpoint(path: PathLike, expected_hash: Optional[str] = None) -> Checkpoint:
    """Load a checkpoint, optionally checking its model config hash.

    Raises:
        CheckpointError: Missing, unreadable or unknown-version file.
        ConfigMismatchError: The stored hash differs from ``expected_hash``.
    """
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except FileNotFoundError as e:
        raise CheckpointError(f"Checkpoint not found: {path}") from e
    except (OSError, RuntimeError, EOFError, ValueError, pickle.UnpicklingError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_VERSION:
        version = payload.get("format_version") if isinstance(payload, dict) else None
        raise CheckpointError(f"{path}: unsupported checkpoint version {version!r}")
    try:
        ckpt = Checkpoint(**payload)
    except TypeError as e:
        raise CheckpointError(f"{path}: malformed checkpoint ({e})") from e
    if expected_hash is not None and ckpt.config_hash != expected_hash:
        raise ConfigMismatchError(
            f"Checkpoint {path} was trained with config {ckpt.config_hash}, "
            f"current config is {expected_hash}"
        )
    return ckpt


# -- Inference ---------------------------------------------------------------


def predict_episodes(
    model: GroundedQAModel,
    episodes: Sequence[Episode],
    batch_size: int,
    progress: bool = False,
) -> dict[str, EpisodePrediction]:
    """Deterministic predictions for a list of episodes, keyed by id."""
    results: dict[str, EpisodePrediction] = {}
    starts = range(0, len(episodes), batch_size)
    for start in tqdm(starts, desc="predict", disable=not progress, leave=False):
        for pred in model.predict(episodes[start : start + batch_size]):
            results[pred.episode_id] = pred
    fallbacks = sum(p.grounding.fallback for p in results.values())
    if fallbacks:
        logger.warning(f"Temporal fallback used for {fallbacks}/{len(results)} episodes")
    return results


def as_predictions(preds: dict[str, EpisodePrediction]) -> dict[str, Prediction]:
    return {k: Prediction(p.answer, p.grounding) for k, p in preds.items()}


def evaluate_split(
    model: GroundedQAModel,
    split: Split,
    regimes: Sequence[Regime],
    batch_size: int,
    progress: bool = False,
) -> tuple[dict[str, Prediction], dict[Regime, MetricReport]]:
    preds = as_predictions(predict_episodes(model, split.episodes, batch_size, progress))
    truths = split.records()
    return preds, {r: evaluate(preds, truths, r) for r in regimes}


# -- Training ----------------------------------------------------------------


@dataclass
class TrainResult:
    best_path: Path
    last_path: Path
    best_acc: float
    iterations: int
    history: list[dict[str, Any]]


class Trainer:
    """Optimizes the three-branch objective on a training split."""

    def __init__(
        self,
        cfg: RunConfig,
        train: Split,
        val: Optional[Split] = None,
        progress: bool = False,
    ) -> None:
        if not train.episodes:
            raise DatasetError("Training split is empty")
        self.cfg = cfg
        self.train_split = train
        self.val_split = val
        self.progress = progress

        random.seed(cfg.seed)
        np.random.seed(cfg.seed % 2**32)
        torch.manual_seed(cfg.seed)
        self.device = select_device(cfg.optimizer.device)

        vocab = Vocabulary.build(answers_of(train.episodes), cfg.decoder.vocab_size)
        self.model = GroundedQAModel(cfg.model, vocab).to(self.device)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=cfg.optimizer.lr)
        self.scheduler = torch.optim.lr_scheduler.MultiStepLR(
            self.optimizer, milestones=list(cfg.optimizer.milestones), gamma=cfg.optimizer.gamma
        )
        self.noise = self.model.grounder.new_generator(derive_seed(cfg.seed, 1))
        self.sampler = np.random.default_rng(derive_seed(cfg.seed, 2))
        self.order: list[int] = []
        self.cursor = 0
        self.iteration = 0
        self.history: list[dict[str, Any]] = []
        self.best_acc = -1.0
        self.hash = config_hash(cfg)
        logger.info(
            f"Model {self.hash}: {sum(p.numel() for p in self.model.parameters())} parameters, "
            f"vocabulary of {len(vocab)} words"
        )

    @property
    def vocab(self) -> Vocabulary:
        return self.model.vocab

    def next_batch(self) -> list[Episode]:
        episodes = self.train_split.episodes
        batch = []
        while len(batch) < self.cfg.optimizer.batch_size:
            if self.cursor >= len(self.order):
                self.order = [int(i) for i in self.sampler.permutation(len(episodes))]
                self.cursor = 0
            take = min(self.cfg.optimizer.batch_size - len(batch), len(self.order) - self.cursor)
            batch.extend(episodes[i] for i in self.order[self.cursor : self.cursor + take])
            self.cursor += take
        return batch

    def step(self) -> LossBreakdown:
        """One optimization step.

        Raises:
            TrainingDivergedError: The loss is not finite.
        """
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        losses = self.model.compute_losses(self.next_batch(), self.cfg.loss, self.noise)
        parts = losses.as_floats()
        if not all(math.isfinite(v) for v in parts.values()):
            raise TrainingDivergedError(self.iteration, parts)
        losses.total.backward()
        if self.cfg.optimizer.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.optimizer.grad_clip)
        self.optimizer.step()
        self.scheduler.step()
        self.iteration += 1
        return losses

    def validate(self) -> Optional[MetricReport]:
        if self.val_split is None or not self.val_split.episodes:
            return None
        _, reports = evaluate_split(
            self.model, self.val_split, [TOP_1X1], self.cfg.optimizer.batch_size
        )
        return reports[TOP_1X1]

    # -- State ---------------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config_hash=self.hash,
            config=self.cfg.to_dict(),
            vocab=list(self.vocab.words),
            model_state=self.model.state_dict(),
            optimizer_state=self.optimizer.state_dict(),
            scheduler_state=self.scheduler.state_dict(),
            iteration=self.iteration,
            rng={
                "python": random.getstate(),
                "numpy": np.random.get_state(),
                "torch": torch.get_rng_state(),
                "noise": self.noise.get_state(),
                "sampler": self.sampler.bit_generator.state,
            },
            sampler={"order": list(self.order), "cursor": self.cursor},
            history=list(self.history),
            best_acc=self.best_acc,
        )

    def restore(self, ckpt: Checkpoint) -> None:
        """Continue from a checkpoint of the same configuration.

        Raises:
            ConfigMismatchError: The checkpoint belongs to another model config.
        """
        if ckpt.config_hash != self.hash:
            raise ConfigMismatchError(
                f"Checkpoint config {ckpt.config_hash} != run config {self.hash}"
            )
        if list(self.vocab.words) != list(ckpt.vocab):
            raise ConfigMismatchError("Checkpoint vocabulary differs from the training split")
        self.model.load_state_dict(ckpt.model_state)
        if ckpt.optimizer_state is not None:
            self.optimizer.load_state_dict(ckpt.optimizer_state)
        if ckpt.scheduler_state is not None:
            self.scheduler.load_state_dict(ckpt.scheduler_state)
        self.iteration = ckpt.iteration
        self.history = list(ckpt.history)
        self.best_acc = ckpt.best_acc
        self.order = list(ckpt.sampler.get("order", []))
        self.cursor = int(ckpt.sampler.get("cursor", 0))
        rng = ckpt.rng
        if rng:
            random.setstate(rng["python"])
            np.random.set_state(rng["numpy"])
            torch.set_rng_state(rng["torch"])
            self.noise.set_state(rng["noise"])
            self.sampler.bit_generator.state = rng["sampler"]
        logger.info(f"Resumed from iteration {self.iteration}")

    # -- Loop ----------------------------------------------------------------

    def fit(
        self,
        out_dir: PathLike,
        resume: bool = False,
        max_iterations: Optional[int] = None,
    ) -> TrainResult:
        """Train until ``max_iterations``, evaluating and checkpointing on the way.

        Args:
            out_dir: Directory receiving ``best.pt`` and ``last.pt``.
            resume: Continue from ``out_dir/last.pt`` when it exists.
            max_iterations: Stop early at this iteration (for tests and
                interrupted runs); defaults to the configured budget.
        """
        out = Path(out_dir)
        last_path, best_path = out / LAST_NAME, out / BEST_NAME
        if resume and last_path.exists():
            self.restore(load_checkpoint(last_path))
        opt = self.cfg.optimizer
        stop = opt.max_iterations
        if max_iterations is not None:
            stop = min(max_iterations, stop)

        bar = tqdm(
            total=stop, initial=self.iteration, desc="train", disable=not self.progress
        )
        while self.iteration < stop:
            losses = self.step()
            bar.update(1)
            parts = losses.as_floats()
            if self.iteration % opt.log_interval == 0 or self.iteration == stop:
                lr = self.scheduler.get_last_lr()[0]
                logger.info(
                    f"iter {self.iteration} lr {lr:.2e} bce {parts['bce']:.4f} "
                    f"cons {parts['cons']:.4f} total {parts['total']:.4f}"
                )
                self.history.append({"iteration": self.iteration, "lr": lr, **parts})
            if self.iteration % opt.eval_interval == 0 or self.iteration == stop:
                self._evaluate_and_save(best_path, last_path)
        bar.close()

        if not last_path.exists() or self.iteration == 0:
            self._evaluate_and_save(best_path, last_path)
        return TrainResult(best_path, last_path, self.best_acc, self.iteration, self.history)

    def _evaluate_and_save(self, best_path: Path, last_path: Path) -> None:
        report = self.validate()
        acc = report.acc if report is not None else None
        if report is not None:
            logger.info(
                f"iter {self.iteration} val acc {report.acc:.2f} "
                f"iou@0.5 {report.iou_hit_rate.get(0.5, 0.0):.2f} "
                f"gqa@0.5 {report.gqa.get(0.5, 0.0):.2f}"
            )
            self.history.append({"iteration": self.iteration, "val": report.to_dict()})
        improved = acc is None or acc > self.best_acc
        if improved:
            self.best_acc = acc if acc is not None else self.best_acc
        ckpt = self.checkpoint()
        save_checkpoint(ckpt, last_path)
        if improved or not best_path.exists():
            save_checkpoint(ckpt, best_path)
            logger.info(f"Saved best checkpoint to {best_path}")
