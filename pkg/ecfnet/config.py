"""
JSON run configuration for ``ecfnet train``::

    {
      "model": {"base_channels": 16, "blocks_per_stage": 2},
      "train": {"total_steps": 200, "seed": 7},
      "data": {"synthetic": {"count": 4, "size": 64, "degradation": {"kind": "haze"}}},
      "out_dir": "runs/haze"
    }

``data`` holds either ``pairs`` (a directory with ``input/`` and ``target/``
PPM files, plus an optional ``heldout`` directory) or ``synthetic``. Relative
paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import dataclasses
import json
import os

from ecfnet.data import DegradationSpec
from ecfnet.data import PairDataset
from ecfnet.exceptions import DegradationError
from ecfnet.exceptions import InvalidConfig
from ecfnet.model import ModelConfig
from ecfnet.train import TrainConfig

__all__ = [
    "DataConfig",
    "RunConfig",
    "SyntheticData",
]


def _reject_unknown(data, allowed, section):
    if not isinstance(data, dict):
        raise InvalidConfig(violations=[f"{section} must be a JSON object"])
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise InvalidConfig(violations=[f"unknown key {section}.{key}" for key in unknown])


@dataclasses.dataclass(frozen=True)
class SyntheticData:
    degradation: DegradationSpec
    count: int = 4
    size: int = 64
    seed: int = 7

    def __post_init__(self):
        problems = []
        if self.count < 1:
            problems.append(f"data.synthetic.count must be positive, got {self.count}")
        if self.size < 16 or self.size % 16:  # noqa: PLR2004
            problems.append(f"data.synthetic.size must be a positive multiple of 16, got {self.size}")
        if problems:
            raise InvalidConfig(violations=problems)

    @classmethod
    def from_dict(cls, data):
        _reject_unknown(data, ("degradation", "count", "size", "seed"), "data.synthetic")
        data = dict(data)
        try:
            degradation = DegradationSpec.from_dict(data.pop("degradation", {"kind": "haze"}))
        except (DegradationError, TypeError) as error:
            raise InvalidConfig(violations=[f"data.synthetic.degradation: {error}"]) from error
        return cls(degradation=degradation, **data)


@dataclasses.dataclass(frozen=True)
class DataConfig:
    pairs: str | None = None
    heldout: str | None = None
    synthetic: SyntheticData | None = None

    def __post_init__(self):
        if (self.pairs is None) == (self.synthetic is None):
            raise InvalidConfig(violations=["data needs exactly one of 'pairs' or 'synthetic'"])
        if self.heldout is not None and self.pairs is None:
            raise InvalidConfig(violations=["data.heldout is only valid together with data.pairs"])

    @classmethod
    def from_dict(cls, data, base_dir):
        _reject_unknown(data, ("pairs", "heldout", "synthetic"), "data")
        resolve = lambda path: None if path is None else os.path.normpath(os.path.join(base_dir, path))  # noqa: E731
        synthetic = data.get("synthetic")
        return cls(
            pairs=resolve(data.get("pairs")),
            heldout=resolve(data.get("heldout")),
            synthetic=None if synthetic is None else SyntheticData.from_dict(synthetic),
        )

    def dataset(self, threads=None):
        if self.synthetic is not None:
            spec = self.synthetic
            return PairDataset.synthetic(spec.count, spec.size, spec.degradation, spec.seed, threads=threads)
        return PairDataset.from_directory(self.pairs, self.heldout)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: DataConfig
    out_dir: str

    @classmethod
    def from_dict(cls, data, base_dir="."):
        _reject_unknown(data, ("model", "train", "data", "out_dir"), "config")
        problems = [f"missing section {key!r}" for key in ("data", "out_dir") if key not in data]
        if problems:
            raise InvalidConfig(violations=problems)
        try:
            model = ModelConfig.from_dict(data.get("model", {}))
            train = TrainConfig.from_dict(data.get("train", {}))
        except TypeError as error:
            raise InvalidConfig(violations=[str(error)]) from error
        return cls(
            model=model,
            train=train,
            data=DataConfig.from_dict(data["data"], base_dir),
            out_dir=os.path.normpath(os.path.join(base_dir, data["out_dir"])),
        )

    @classmethod
    def load(cls, path):
        with open(path) as stream:
            try:
                data = json.load(stream)
            except json.JSONDecodeError as error:
                raise InvalidConfig(violations=[f"{path} is not valid JSON: {error}"]) from error
        return cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))
