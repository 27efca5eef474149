"""Runtime capability detection for training and inference."""

import importlib.util
import logging
from dataclasses import dataclass, field
from typing import Optional

import torch

from .exceptions import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class RuntimeCapabilities:
    """What the current interpreter and torch build can do."""

    torch_version: str
    has_cuda: bool = False
    cuda_devices: int = 0
    supports_float64: bool = False
    has_pillow: bool = False
    num_threads: int = 1
    errors: list[str] = field(default_factory=list)

    @property
    def can_render_overlay(self) -> bool:
        return self.has_pillow

    @property
    def can_gradcheck(self) -> bool:
        return self.supports_float64


def _check_float64() -> bool:
    try:
        x = torch.ones(2, dtype=torch.float64, requires_grad=True)
        (x * x).sum().backward()
        return x.grad is not None and x.grad.dtype == torch.float64
    except RuntimeError:
        return False


def _check_pillow() -> bool:
    return importlib.util.find_spec("PIL") is not None


def detect_capabilities() -> RuntimeCapabilities:
    """Detect the available runtime features.

    Returns:
        RuntimeCapabilities with detected features and notes on missing ones.
    """
    has_cuda = torch.cuda.is_available()
    caps = RuntimeCapabilities(
        torch_version=torch.__version__,
        has_cuda=has_cuda,
        cuda_devices=torch.cuda.device_count() if has_cuda else 0,
        supports_float64=_check_float64(),
        has_pillow=_check_pillow(),
        num_threads=torch.get_num_threads(),
    )

    if not caps.has_pillow:
        caps.errors.append(
            "Pillow not installed; overlays fall back to coordinates only. "
            "Install: pip install 'textvideo-grounding[viz]'"
        )
    if not caps.supports_float64:
        caps.errors.append("float64 autograd unavailable; gradient checks cannot run")
    return caps


def select_device(requested: str, caps: Optional[RuntimeCapabilities] = None) -> torch.device:
    """Resolve a configured device name.

    Args:
        requested: ``"auto"``, ``"cpu"``, ``"cuda"`` or ``"cuda:<n>"``.
        caps: Detected capabilities; detected on demand when omitted.

    Raises:
        ConfigError: Unknown device, or CUDA requested without CUDA support.
    """
    caps = caps or detect_capabilities()
    name = requested.strip().lower()
    if name == "auto":
        device = torch.device("cuda" if caps.has_cuda else "cpu")
        logger.info(f"Selected device {device}")
        return device
    try:
        device = torch.device(name)
    except RuntimeError as e:
        raise ConfigError(f"unknown device {requested!r}", "optimizer.device") from e
    if device.type == "cuda":
        if not caps.has_cuda:
            raise ConfigError("CUDA requested but not available", "optimizer.device")
        if device.index is not None and device.index >= caps.cuda_devices:
            raise ConfigError(
                f"cuda:{device.index} requested, {caps.cuda_devices} device(s) present",
                "optimizer.device",
            )
    elif device.type != "cpu":
        raise ConfigError(f"unsupported device type {device.type!r}", "optimizer.device")
    return device
