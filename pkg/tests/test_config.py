from __future__ import annotations

import json
import os
import tempfile
from unittest import TestCase

import pytest

from ecfnet.config import DataConfig
from ecfnet.config import RunConfig
from ecfnet.config import SyntheticData
from ecfnet.exceptions import InvalidConfig


def run_document(**overrides):
    document = {
        "model": {"base_channels": 4, "blocks_per_stage": 1},
        "train": {"total_steps": 2, "batch": 1, "patch": 16},
        "data": {"synthetic": {"count": 2, "size": 16, "degradation": {"kind": "blur", "sigma": 1.0}}},
        "out_dir": "runs/blur",
    }
    document.update(overrides)
    return document


class RunConfigTest(TestCase):
    def test_sections(self):
        run = RunConfig.from_dict(run_document(), base_dir="/work")
        assert run.model.base_channels == 4
        assert run.train.total_steps == 2
        assert run.data.synthetic.degradation.sigma == 1.0
        assert run.out_dir == os.path.normpath("/work/runs/blur")

    def test_task_preset(self):
        run = RunConfig.from_dict(run_document(model={"task": "dehaze", "base_channels": 4}))
        assert run.model.blocks_per_stage == 4

    def test_unknown_keys_are_rejected(self):
        with pytest.raises(InvalidConfig, match="unknown key config.optimizer"):
            RunConfig.from_dict(run_document(optimizer={}))
        with pytest.raises(InvalidConfig, match="unknown model key"):
            RunConfig.from_dict(run_document(model={"depth": 3}))
        with pytest.raises(InvalidConfig, match="data.synthetic.shape"):
            RunConfig.from_dict(run_document(data={"synthetic": {"shape": 16}}))

    def test_missing_sections(self):
        with pytest.raises(InvalidConfig) as info:
            RunConfig.from_dict({"model": {}})
        assert len(info.value.violations) == 2

    def test_bad_degradation_is_a_config_error(self):
        with pytest.raises(InvalidConfig, match="degradation"):
            RunConfig.from_dict(run_document(data={"synthetic": {"degradation": {"kind": "fog"}}}))

    def test_paths_resolve_against_the_config_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "run.json")
            with open(path, "w") as stream:
                json.dump(run_document(data={"pairs": "pairs/train", "heldout": "pairs/test"}), stream)
            run = RunConfig.load(path)
            root = os.path.dirname(os.path.abspath(path))
        assert run.data.pairs == os.path.join(root, "pairs", "train")
        assert run.data.heldout == os.path.join(root, "pairs", "test")
        assert run.out_dir == os.path.join(root, "runs", "blur")

    def test_invalid_json(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "run.json")
            with open(path, "w") as stream:
                stream.write("{model: 1}")
            with pytest.raises(InvalidConfig, match="not valid JSON"):
                RunConfig.load(path)

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            RunConfig.load("/nonexistent/run.json")


class DataConfigTest(TestCase):
    def test_exactly_one_source(self):
        with pytest.raises(InvalidConfig, match="exactly one"):
            DataConfig()
        with pytest.raises(InvalidConfig, match="exactly one"):
            DataConfig.from_dict({"pairs": "a", "synthetic": {}}, ".")

    def test_heldout_needs_pairs(self):
        with pytest.raises(InvalidConfig, match="heldout"):
            DataConfig.from_dict({"heldout": "b", "synthetic": {}}, ".")

    def test_synthetic_dataset(self):
        data = DataConfig.from_dict({"synthetic": {"count": 3, "size": 16}}, ".")
        dataset = data.dataset()
        assert len(dataset) == 3
        assert data.synthetic.degradation.kind == "haze"

    def test_synthetic_limits(self):
        with pytest.raises(InvalidConfig) as info:
            SyntheticData.from_dict({"count": 0, "size": 20})
        assert len(info.value.violations) == 2
