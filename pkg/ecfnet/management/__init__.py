"""
Command-line dispatch: ``ecfnet <command> [options]``.
"""

from __future__ import annotations

import argparse
import importlib
import logging
import sys

from ecfnet.management.base import EXIT_CODES_HELP
from ecfnet.management.base import classify

__all__ = [
    "COMMANDS",
    "create_parser",
    "execute_from_command_line",
    "load_command",
]

logger = logging.getLogger(__name__)

COMMANDS = {
    "train": "train",
    "infer": "infer",
    "eval": "evaluate",
    "degrade": "degrade",
    "inspect": "inspect",
}

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}


def load_command(name, stdout=None):
    module = importlib.import_module(f"ecfnet.management.commands.{COMMANDS[name]}")
    return module.Command(stdout=stdout)


def create_parser(commands):
    parser = argparse.ArgumentParser(
        prog="ecfnet",
        allow_abbrev=False,
        description="Efficient image restoration: train, run and inspect ECFNet models.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for name, command in commands.items():
        subparser = subparsers.add_parser(
            name,
            help=command.help,
            allow_abbrev=False,
            description=command.help,
            epilog=EXIT_CODES_HELP,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        subparser.add_argument(
            "--verbosity",
            "-v",
            type=int,
            choices=sorted(VERBOSITY_LEVELS),
            default=0,
            help="0 warnings only, 1 progress, 2 debug output.",
        )
        command.add_arguments(subparser)
    return parser


def execute_from_command_line(argv=None, stdout=None, stderr=None):
    """Run one command and return its exit code"""
    stderr = stderr or sys.stderr
    commands = {name: load_command(name, stdout=stdout) for name in COMMANDS}
    parser = create_parser(commands)
    try:
        options = vars(parser.parse_args(argv))
    except SystemExit as exit_:
        return exit_.code if isinstance(exit_.code, int) else 2

    logging.basicConfig(
        level=VERBOSITY_LEVELS[options["verbosity"]],
        stream=stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    name = options.pop("command")
    try:
        commands[name].handle(**options)
    except Exception as error:  # noqa: BLE001
        code, kind = classify(error)
        if code == 1:
            logger.debug("unexpected error in %s", name, exc_info=True)
        message = " ".join(str(error).split()) or error.__class__.__name__
        stderr.write(f"error: {kind}: {message}\n")
        return code
    return 0
