"""Run configuration: YAML file, defaults and the model config hash.

A config file is a mapping with one section per component::

    seed: 0
    data_dir: data
    out_dir: runs/default
    encoder: {d: 128, num_heads: 4, ...}
    grounding: {k1: 5, k2: 5, ...}
    decoder: {layers: 3, steps: 12, ...}
    loss: {tau: 0.1, lambda: 100.0}
    synth: {num_frames: 32, noise: {char_sub_rate: 0.0}, ...}
    optimizer: {lr: 1.0e-4, milestones: [2000, 2600], ...}

Unknown keys are rejected so typos fail loudly.
"""

import dataclasses
import hashlib
import json
import logging
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .decode import DecoderConfig
from .encode import EncoderConfig
from .exceptions import ConfigError
from .ground import GroundingConfig
from .model import ModelConfig
from .objective import LossConfig
from .synth import SynthConfig

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# YAML spellings that are not valid Python identifiers.
_ALIASES = {"loss": {"lambda": "lam"}}


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    milestones: tuple[int, ...] = (2000, 2600)
    gamma: float = 0.1
    batch_size: int = 16
    max_iterations: int = 3000
    eval_interval: int = 250
    log_interval: int = 25
    grad_clip: float = 1.0
    device: str = "cpu"

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError("must be > 0", "optimizer.lr")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError("must be strictly increasing", "optimizer.milestones")
        if not 0 < self.gamma <= 1:
            raise ConfigError("must be in (0, 1]", "optimizer.gamma")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "optimizer.batch_size")
        if self.max_iterations < 0:
            raise ConfigError("must be >= 0", "optimizer.max_iterations")
        for name in ("eval_interval", "log_interval"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", f"optimizer.{name}")
        if self.grad_clip < 0:
            raise ConfigError("must be >= 0", "optimizer.grad_clip")


@dataclass
class RunConfig:
    """Every setting of a run."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    grounding: GroundingConfig = field(default_factory=GroundingConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs/default"

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.encoder, self.grounding, self.decoder)

    def validate(self) -> None:
        self.model.validate()
        self.loss.validate()
        self.synth.validate()
        self.optimizer.validate()
        if self.seed < 0:
            raise ConfigError(f"must be >= 0, got {self.seed}", "seed")
        if self.synth.num_frames > self.encoder.max_frames:
            raise ConfigError(
                f"{self.synth.num_frames} frames exceed encoder.max_frames="
                f"{self.encoder.max_frames}",
                "synth.num_frames",
            )
        if self.synth.max_tokens_per_frame > self.encoder.max_tokens_per_frame:
            raise ConfigError(
                "exceeds encoder.max_tokens_per_frame", "synth.max_tokens_per_frame"
            )
        if self.synth.visual_dim != self.encoder.visual_dim:
            raise ConfigError("must equal encoder.visual_dim", "synth.visual_dim")
        if self.synth.max_track_id > self.encoder.max_tracks:
            raise ConfigError("exceeds encoder.max_tracks", "synth.max_track_id")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _coerce(value: Any, kind: Any, key: str) -> Any:
    origin = typing.get_origin(kind)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", key)
        (item,) = typing.get_args(kind)[:1]
        return tuple(_coerce(v, item, key) for v in value)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key)
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    return value


def _build(cls: type, data: Any, section: str) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", section or None)
    aliases = _ALIASES.get(section, {})
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for raw_key, value in data.items():
        name = aliases.get(raw_key, raw_key)
        key = f"{section}.{raw_key}" if section else str(raw_key)
        if name not in names:
            raise ConfigError("unknown key", key)
        kind = hints[name]
        if dataclasses.is_dataclass(kind):
            kwargs[name] = _build(kind, value, key)
        else:
            kwargs[name] = _coerce(value, kind, key)
    return cls(**kwargs)


def config_from_dict(data: Optional[dict[str, Any]]) -> RunConfig:
    """Build and validate a :class:`RunConfig` from a plain mapping."""
    cfg = _build(RunConfig, data or {}, "")
    cfg.validate()
    return cfg


def load_config(path: Optional[PathLike]) -> RunConfig:
    """Load a YAML config file; ``None`` yields the defaults.

    Raises:
        ConfigError: The file is unreadable, not YAML, or fails validation.
    """
    if path is None:
        return config_from_dict({})
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config file ({e})", str(path)) from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML ({e})", str(path)) from e
    logger.debug(f"Loaded config from {path}")
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: PathLike) -> None:
    data = cfg.to_dict()
    data["loss"]["lambda"] = data["loss"].pop("lam")
    Path(path).write_text(yaml.safe_dump(_plain(data), sort_keys=False), encoding="utf-8")


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_hash(cfg: Union[RunConfig, ModelConfig]) -> str:
    """SHA-256 over the model-shaping sections, truncated to 16 hex characters."""
    model = cfg.model if isinstance(cfg, RunConfig) else cfg
    blob = json.dumps(_plain(asdict(model)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
