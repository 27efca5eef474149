"""Command handler functions for the command-line interface.

Each ``handle_*`` function takes a :class:`CommandContext` carrying the run
configuration plus the parsed flags, prints its human-readable output through
the context, and returns a structured result for programmatic callers.
"""

import json
import logging
import sys
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, TextIO

from .config import RunConfig, config_hash, save_config
from .core import TokenSource, save_predictions
from .detection import RuntimeCapabilities, detect_capabilities, select_device
from .exceptions import ConfigError, ValidationError
from .metrics import MetricReport, Regime, evaluate
from .model import EpisodePrediction, GroundedQAModel
from .overlay import OverlayManager
from .synth import Split, dataset_statistics, derive_seed, generate_split, load_split
from .training import (
    BEST_NAME,
    TrainResult,
    Trainer,
    as_predictions,
    load_checkpoint,
    predict_episodes,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
ALL_REGIMES = (Regime(1, 1), Regime(5, 5))


@dataclass
class CommandContext:
    """Shared state passed to every handler function."""

    config: RunConfig = field(default_factory=RunConfig)
    config_explicit: bool = False
    capabilities: Optional[RuntimeCapabilities] = None
    progress: bool = False
    stdout: TextIO = field(default_factory=lambda: sys.stdout)

    def emit(self, text: str = "") -> None:
        print(text, file=self.stdout)

    def data_root(self, args: dict[str, Any]) -> Path:
        return Path(args.get("data") or self.config.data_dir)

    def run_dir(self, args: dict[str, Any]) -> Path:
        return Path(args.get("out") or self.config.out_dir)

    def load(self, args: dict[str, Any], name: str) -> Split:
        return load_split(self.data_root(args) / name)

    def capabilities_or_detect(self) -> RuntimeCapabilities:
        if self.capabilities is None:
            self.capabilities = detect_capabilities()
            for note in self.capabilities.errors:
                logger.debug(note)
        return self.capabilities


# ---------------------------------------------------------------------------
# Handler functions
# ---------------------------------------------------------------------------


def handle_synth(ctx: CommandContext, args: dict[str, Any]) -> dict[str, Path]:
    """Generate train/val/test under the dataset root."""
    cfg = ctx.config
    root = Path(args.get("out") or cfg.data_dir)
    sizes = {
        "train": args.get("num_train", 500),
        "val": args.get("num_val", 100),
        "test": args.get("num_test", 100),
    }
    for name, n in sizes.items():
        if n is None or n < 0:
            raise ConfigError(f"must be >= 0, got {n}", f"num_{name}")

    paths = {}
    for i, (name, n) in enumerate(sizes.items()):
        paths[name] = generate_split(
            cfg.synth, n, derive_seed(cfg.seed, i), root / name, name=name, progress=ctx.progress
        )
        stats = dataset_statistics(load_split(paths[name]).episodes)
        ctx.emit(f"== {name} ==")
        ctx.emit(stats.format_table())
        logger.info(
            f"{name}: {n} episodes, segment ratio {stats.mean_segment_ratio:.3f}, "
            f"box area {stats.mean_box_area:.5f}"
        )
    save_config(cfg, root / "config.yaml")
    return paths


def handle_train(ctx: CommandContext, args: dict[str, Any]) -> TrainResult:
    """Train and checkpoint."""
    cfg = ctx.config
    cfg.optimizer.device = str(select_device(cfg.optimizer.device, ctx.capabilities_or_detect()))
    train = ctx.load(args, "train")
    val_dir = ctx.data_root(args) / "val"
    val = load_split(val_dir) if val_dir.exists() else None
    if val is None:
        logger.warning(f"No validation split at {val_dir}; best.pt tracks the last evaluation")

    out = ctx.run_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    trainer = Trainer(cfg, train, val, progress=ctx.progress)
    result = trainer.fit(
        out, resume=bool(args.get("resume")), max_iterations=args.get("max_iterations")
    )
    ctx.emit(f"iterations: {result.iterations}")
    ctx.emit(f"best val acc: {result.best_acc:.2f}")
    ctx.emit(f"best checkpoint: {result.best_path}")
    return result


def _load_model(ctx: CommandContext, args: dict[str, Any]) -> tuple[GroundedQAModel, str, Path]:
    path = Path(args.get("checkpoint") or Path(ctx.config.out_dir) / BEST_NAME)
    expected = config_hash(ctx.config) if ctx.config_explicit else None
    ckpt = load_checkpoint(path, expected)
    model = ckpt.build_model()
    device = select_device(ctx.config.optimizer.device, ctx.capabilities_or_detect())
    model.to(device)
    logger.info(f"Loaded {path} (config {ckpt.config_hash}, iteration {ckpt.iteration})")
    return model, ckpt.config_hash, path


@dataclass
class EvalOutcome:
    predictions_path: Path
    report_path: Path
    reports: dict[Regime, MetricReport]


def handle_eval(ctx: CommandContext, args: dict[str, Any]) -> EvalOutcome:
    """Deterministic inference over a split plus metrics under each regime."""
    model, digest, ckpt_path = _load_model(ctx, args)
    split_name = args.get("split") or "test"
    split = ctx.load(args, split_name)
    regimes = (Regime.parse(args["regime"]),) if args.get("regime") else ALL_REGIMES

    preds = as_predictions(
        predict_episodes(model, split.episodes, ctx.config.optimizer.batch_size, ctx.progress)
    )
    truths = split.records()
    reports = {r: evaluate(preds, truths, r) for r in regimes}

    out = Path(args.get("out") or ckpt_path.parent)
    out.mkdir(parents=True, exist_ok=True)
    pred_path = out / f"predictions_{split_name}.json"
    report_path = out / f"report_{split_name}.json"
    save_predictions(
        preds, pred_path, config_hash=digest, regime=",".join(str(r) for r in regimes)
    )
    report_path.write_text(
        json.dumps(
            {
                "config_hash": digest,
                "split": split_name,
                "reports": [r.to_dict(include_records=True) for r in reports.values()],
            },
            indent=1,
        ),
        encoding="utf-8",
    )
    for regime, report in reports.items():
        ctx.emit(f"== Top {regime} ({split_name}) ==")
        ctx.emit(report.format_table())
    logger.info(f"Wrote {pred_path} and {report_path}")
    return EvalOutcome(pred_path, report_path, reports)


def format_prediction(pred: EpisodePrediction, top: int = 5) -> str:
    """Answer, word sources and the ranked grounding of one prediction."""
    lines = [f"answer: {pred.answer!r}"]
    for i, word in enumerate(pred.decoding.words):
        if word.source is TokenSource.OCR and word.token is not None:
            where = f"ocr frame {word.token.frame_index} track {word.token.track_id}"
        else:
            where = word.source.value
        lines.append(f"  word {i}: {word.text!r} <- {where}")
    grounding = pred.grounding
    if not grounding.frames:
        lines.append("grounding: none")
    for frame in grounding.frames[:top]:
        lines.append(f"frame {frame.index} score {frame.score:.4f}")
        for rank, scored in enumerate(grounding.boxes.get(frame.index, ())[:top], start=1):
            box = ", ".join(f"{v:.3f}" for v in scored.token.box.to_list())
            lines.append(f"  #{rank} {scored.token.text!r} [{box}] score {scored.score:.4f}")
    if grounding.fallback:
        lines.append("(temporal fallback: no frame preferred the positive class)")
    return "\n".join(lines)


def handle_predict(ctx: CommandContext, args: dict[str, Any]) -> EpisodePrediction:
    """Single-episode inference."""
    episode_id = args.get("episode")
    if not episode_id:
        raise ValidationError("An episode id is required")
    model, _, _ = _load_model(ctx, args)
    split = ctx.load(args, args.get("split") or "test")
    episode = split.by_id().get(episode_id)
    if episode is None:
        raise ValidationError(f"Unknown episode id {episode_id!r} in split {split.name}")

    (pred,) = model.predict([episode])
    ctx.emit(f"question: {episode.question}")
    ctx.emit(format_prediction(pred, args.get("top") or 5))

    overlay = args.get("overlay")
    if overlay:
        manager = OverlayManager()
        image = manager.render(episode, pred.answer, pred.grounding, overlay)
        ctx.emit(f"overlay coordinates: {manager.coordinates_path(overlay)}")
        if image is not None:
            ctx.emit(f"overlay image: {image}")
    return pred


HANDLER_MAP: dict[str, Callable[[CommandContext, dict[str, Any]], Any]] = {
    "synth": handle_synth,
    "train": handle_train,
    "eval": handle_eval,
    "predict": handle_predict,
}
