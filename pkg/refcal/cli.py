"""Entry point of the ``refcal`` console script: ``refcal [--verbose] <command> [options]``."""

import argparse
import importlib
import logging
import sys
from typing import List, Optional, Sequence

from refcal import __version__
from refcal.module_utils.errors import UsageError

logger = logging.getLogger("refcal")

COMMANDS = ("generate", "train", "evaluate", "verify", "pitfall", "robustness")


def configure_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)


def main(argv: Optional[Sequence[str]] = None) -> None:
    parser = argparse.ArgumentParser(prog="refcal", description="Classifier reliability toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log per-epoch progress.")
    parser.add_argument("--version", action="version", version="%(prog)s {0}".format(__version__))
    parser.add_argument("command", help="One of: {0}.".format(", ".join(COMMANDS)))
    parser.add_argument("arguments", nargs=argparse.REMAINDER)
    arguments: List[str] = list(sys.argv[1:] if argv is None else argv)
    namespace = parser.parse_args(arguments)

    configure_logging(namespace.verbose)
    if namespace.command not in COMMANDS:
        UsageError(
            "Unknown command '{0}', choose one of: {1}.".format(namespace.command, ", ".join(COMMANDS))
        ).fail(logger)
    command = importlib.import_module("refcal.commands.{0}".format(namespace.command))
    command.main(namespace.arguments)


if __name__ == "__main__":
    main()
