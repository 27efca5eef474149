"""Command-line entry point.

Exit codes: 0 on success, 2 on validation errors (bad config, bad input
files, unknown ids), 3 on runtime failures.
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from typing import Optional

from . import __version__
from .command_definitions import get_command_definitions
from .commands import HANDLER_MAP, CommandContext
from .config import load_config
from .exceptions import TextVideoGroundingError, ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textvideo-grounding",
        description="Grounded question answering over scene text in videos.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for definition in get_command_definitions():
        cmd = sub.add_parser(definition.name, help=definition.description)
        cmd.description = definition.description
        for flag in definition.flags:
            cmd.add_argument(flag.name, **flag.argparse_kwargs())
    return parser


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as e:
        # argparse exits 2 on usage errors, which is our validation code too.
        return int(e.code or 0)

    configure_logging(args.get("verbose", False), args.get("quiet", False))
    command = args.pop("command")
    try:
        cfg = load_config(args.get("config"))
        if args.get("seed") is not None:
            cfg.seed = args["seed"]
            cfg.validate()
        ctx = CommandContext(
            config=cfg,
            config_explicit=args.get("config") is not None,
            progress=not args.get("quiet") and sys.stderr.isatty(),
        )
        logger.info(f"Running {command}")
        HANDLER_MAP[command](ctx, args)
    except ValidationError as e:
        logger.error(str(e))
        return EXIT_VALIDATION
    except (TextVideoGroundingError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME
    logger.info(f"Finished {command}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
