"""Command-line command definitions.

Every subcommand with its flags, kept apart from the parser construction in
``cli.py`` and the handlers in ``commands.py``.
"""

from dataclasses import dataclass, field
from typing import Any, Optional

REGIME_CHOICES = ("1x1", "5x5")
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class Flag:
    """One ``--flag`` of a subcommand, mapped onto ``argparse.add_argument``."""

    name: str
    help: str
    type: Optional[type] = str
    default: Any = None
    choices: Optional[tuple[str, ...]] = None
    required: bool = False
    action: Optional[str] = None
    metavar: Optional[str] = None

    @property
    def dest(self) -> str:
        return self.name.lstrip("-").replace("-", "_")

    def argparse_kwargs(self) -> dict[str, Any]:
        kwargs: dict[str, Any] = {"help": self.help, "dest": self.dest}
        if self.action is not None:
            kwargs["action"] = self.action
            return kwargs
        kwargs.update(type=self.type, default=self.default, required=self.required)
        if self.choices is not None:
            kwargs["choices"] = self.choices
        if self.metavar is not None:
            kwargs["metavar"] = self.metavar
        return kwargs


@dataclass(frozen=True)
class CommandDefinition:
    name: str
    description: str
    flags: tuple[Flag, ...] = field(default_factory=tuple)


COMMON_FLAGS = (
    Flag("--config", "YAML run configuration (defaults when omitted)", metavar="PATH"),
    Flag("--seed", "Override the run seed", type=int),
    Flag("--verbose", "Log at DEBUG level", action="store_true"),
    Flag("--quiet", "Only log warnings and hide progress bars", action="store_true"),
)

DATA_FLAG = Flag("--data", "Dataset root holding train/val/test (default: data_dir)", metavar="DIR")
CHECKPOINT_FLAG = Flag(
    "--checkpoint", "Checkpoint file (default: <out_dir>/best.pt)", metavar="PATH"
)
SPLIT_FLAG = Flag("--split", "Dataset split", default="test", choices=SPLIT_NAMES)


def get_command_definitions() -> list[CommandDefinition]:
    """Return the definitions of every subcommand."""
    return [
        CommandDefinition(
            name="synth",
            description="Generate synthetic train/val/test splits and print their statistics.",
            flags=(
                *COMMON_FLAGS,
                Flag("--out", "Dataset root (default: data_dir)", metavar="DIR"),
                Flag("--num-train", "Training episodes", type=int, default=500),
                Flag("--num-val", "Validation episodes", type=int, default=100),
                Flag("--num-test", "Test episodes", type=int, default=100),
            ),
        ),
        CommandDefinition(
            name="train",
            description="Train on the train split, selecting the best checkpoint on val.",
            flags=(
                *COMMON_FLAGS,
                DATA_FLAG,
                Flag("--out", "Run directory for checkpoints (default: out_dir)", metavar="DIR"),
                Flag("--resume", "Continue from <out>/last.pt", action="store_true"),
                Flag("--max-iterations", "Stop early at this iteration", type=int),
            ),
        ),
        CommandDefinition(
            name="eval",
            description="Predict a split, write the prediction file and report, print metrics.",
            flags=(
                *COMMON_FLAGS,
                DATA_FLAG,
                CHECKPOINT_FLAG,
                SPLIT_FLAG,
                Flag(
                    "--regime",
                    "Grounding window (default: both)",
                    choices=REGIME_CHOICES,
                ),
                Flag("--out", "Directory for predictions and report", metavar="DIR"),
            ),
        ),
        CommandDefinition(
            name="predict",
            description="Answer and ground one episode, printing words, frames and boxes.",
            flags=(
                *COMMON_FLAGS,
                DATA_FLAG,
                CHECKPOINT_FLAG,
                SPLIT_FLAG,
                Flag("--episode", "Episode id", required=True, metavar="ID"),
                Flag("--overlay", "Write an overlay dump to this path", metavar="PATH"),
                Flag("--top", "Frames and boxes to print per frame", type=int, default=5),
            ),
        ),
    ]
