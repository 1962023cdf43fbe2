from __future__ import annotations

import sys

from ecfnet.exceptions import CheckpointError
from ecfnet.exceptions import DegradationError
from ecfnet.exceptions import ImageFormatError
from ecfnet.exceptions import InvalidConfig
from ecfnet.exceptions import ParameterShapeMismatch
from ecfnet.exceptions import ShapeError
from ecfnet.exceptions import TrainingDiverged

__all__ = [
    "EXIT_CODES",
    "BaseCommand",
    "classify",
]

# (error class, exit code, kind); the first matching class wins
EXIT_CODES = (
    (ParameterShapeMismatch, 5, "shape"),
    (ShapeError, 5, "shape"),
    (CheckpointError, 6, "checkpoint"),
    (ImageFormatError, 7, "image"),
    (InvalidConfig, 4, "config"),
    (DegradationError, 4, "config"),
    (TrainingDiverged, 8, "diverged"),
    (FileNotFoundError, 3, "missing-file"),
    (IsADirectoryError, 3, "missing-file"),
)

EXIT_CODES_HELP = """exit codes:
  0  success
  1  unexpected error
  2  usage error (unknown or missing flag)
  3  missing file
  4  bad config or degradation parameters
  5  shape mismatch
  6  corrupt or incompatible checkpoint
  7  bad image file
  8  training diverged
"""


def classify(error):
    """Return ``(exit code, kind)`` for an error raised by a command"""
    for error_class, code, kind in EXIT_CODES:
        if isinstance(error, error_class):
            return code, kind
    return 1, "internal"


class BaseCommand:
    help = ""

    def __init__(self, stdout=None):
        self.stdout = stdout or sys.stdout

    def add_arguments(self, parser):
        pass

    def write(self, line=""):
        self.stdout.write(f"{line}\n")

    def handle(self, **options):
        raise NotImplementedError
