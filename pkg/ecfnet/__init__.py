"""
Efficient image restoration with spatial and frequency attention, on a small
numpy autodiff core.
"""

from __future__ import annotations

from ecfnet.checkpoint import load
from ecfnet.checkpoint import save
from ecfnet.model import ECFNet
from ecfnet.model import ModelConfig
from ecfnet.model import build
from ecfnet.tensor import Tape
from ecfnet.tensor import Tensor

__all__ = [
    "ECFNet",
    "ModelConfig",
    "Tape",
    "Tensor",
    "build",
    "load",
    "save",
]

__version__ = "1.0.0"
