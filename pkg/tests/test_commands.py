from __future__ import annotations

import contextlib
import io
import json
import os
import tempfile
from unittest import TestCase

import numpy as np
import pytest

from ecfnet.__main__ import main
from ecfnet.checkpoint import save
from ecfnet.exceptions import ChecksumMismatch
from ecfnet.exceptions import InvalidConfig
from ecfnet.exceptions import ParameterShapeMismatch
from ecfnet.management import execute_from_command_line
from ecfnet.management.base import classify
from ecfnet.management.commands.degrade import parse_params
from ecfnet.management.commands.evaluate import format_metric
from ecfnet.management.commands.inspect import generate_dot
from ecfnet.model import ModelConfig
from ecfnet.model import build
from ecfnet.ppm import save_ppm

TINY = ModelConfig(base_channels=4, blocks_per_stage=1)


class CommandTestCase(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = self.directory.name
        self.image = os.path.join(self.root, "image.ppm")
        save_ppm(np.random.default_rng(0).uniform(0, 1, (1, 3, 16, 16)), self.image)
        self.model = build(TINY, seed=5)
        self.model.zero_residual_heads()
        self.checkpoint = os.path.join(self.root, "model.ecfn")
        save(self.model, self.checkpoint)

    def tearDown(self):
        self.directory.cleanup()

    def path(self, *parts):
        return os.path.join(self.root, *parts)

    def call(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        code = execute_from_command_line(list(argv), stdout=stdout, stderr=stderr)
        return code, stdout.getvalue(), stderr.getvalue()

    def read(self, path):
        with open(path, "rb") as stream:
            return stream.read()


class DispatchTest(CommandTestCase):
    def test_classify(self):
        assert classify(ParameterShapeMismatch("x")) == (5, "shape")
        assert classify(ChecksumMismatch("x")) == (6, "checkpoint")
        assert classify(InvalidConfig("x")) == (4, "config")
        assert classify(FileNotFoundError("x")) == (3, "missing-file")
        assert classify(RuntimeError("x")) == (1, "internal")

    def test_no_command(self):
        with contextlib.redirect_stderr(io.StringIO()):
            assert self.call()[0] == 2

    def test_unknown_flag_is_rejected(self):
        with contextlib.redirect_stderr(io.StringIO()) as usage:
            code, _, _ = self.call("inspect", "--model", self.checkpoint, "--bogus")
        assert code == 2
        assert "--bogus" in usage.getvalue()

    def test_flag_prefixes_are_rejected(self):
        with contextlib.redirect_stderr(io.StringIO()) as usage:
            code, _, _ = self.call("inspect", "--model", self.checkpoint, "--siz", "32")
        assert code == 2
        assert "--siz" in usage.getvalue()
        with contextlib.redirect_stderr(io.StringIO()):
            code, _, _ = self.call("inspect", "--mod", self.checkpoint)
        assert code == 2

    def test_help_lists_flags_and_exit_codes(self):
        with contextlib.redirect_stdout(io.StringIO()) as text:
            code, _, _ = self.call("infer", "--help")
        assert code == 0
        for flag in ("--model", "--input", "--output", "--verbosity"):
            assert flag in text.getvalue()
        assert "exit codes" in text.getvalue()

    def test_main_entry_point(self):
        with contextlib.redirect_stdout(io.StringIO()):
            assert main(["inspect", "--model", self.checkpoint, "--size", "16"]) == 0


class ErrorExitTest(CommandTestCase):
    def test_missing_file(self):
        code, _, stderr = self.call("inspect", "--model", self.path("absent.ecfn"))
        assert code == 3
        assert stderr.startswith("error: missing-file: ")
        assert stderr.count("\n") == 1

    def test_corrupt_checkpoint(self):
        data = bytearray(self.read(self.checkpoint))
        data[100] ^= 0x01
        with open(self.checkpoint, "wb") as stream:
            stream.write(bytes(data))
        code, _, stderr = self.call("inspect", "--model", self.checkpoint)
        assert code == 6
        assert stderr.startswith("error: checkpoint: checksum mismatch")

    def test_bad_image(self):
        with open(self.image, "wb") as stream:
            stream.write(b"P5 1 1 255\n\x00")
        code, _, stderr = self.call("infer", "--model", self.checkpoint, "--input", self.image, "--output", self.path("o.ppm"))
        assert code == 7
        assert stderr.startswith("error: image: ")

    def test_bad_image_size(self):
        save_ppm(np.zeros((1, 3, 20, 20)), self.image)
        code, _, stderr = self.call("infer", "--model", self.checkpoint, "--input", self.image, "--output", self.path("o.ppm"))
        assert code == 5
        assert "multiple of 16" in stderr

    def test_bad_degradation_parameters(self):
        code, _, stderr = self.call(
            "degrade", "--kind", "haze", "--params", "transmission=2", "--input", self.image, "--output", self.path("o.ppm")
        )
        assert code == 4
        assert "transmission" in stderr

    def test_bad_config_key(self):
        config = self.path("run.json")
        with open(config, "w") as stream:
            json.dump({"data": {"synthetic": {}}, "out_dir": "out", "trian": {}}, stream)
        code, _, stderr = self.call("train", "--config", config)
        assert code == 4
        assert "config.trian" in stderr


class InferTest(CommandTestCase):
    def test_zero_residual_heads_reproduce_input(self):
        output = self.path("restored.ppm")
        code, stdout, _ = self.call("infer", "--model", self.checkpoint, "--input", self.image, "--output", output)
        assert code == 0
        assert output in stdout
        assert self.read(output) == self.read(self.image)


class EvalTest(CommandTestCase):
    def setUp(self):
        super().setUp()
        for folder in ("input", "target"):
            os.makedirs(self.path("pairs", folder))
            save_ppm(np.random.default_rng(1).uniform(0, 1, (1, 3, 16, 16)), self.path("pairs", folder, "a.ppm"))

    def test_identical_pairs(self):
        output = self.path("metrics.csv")
        code, stdout, _ = self.call("eval", "--model", self.checkpoint, "--pairs", self.path("pairs"), "--output", output)
        assert code == 0
        with open(output) as stream:
            lines = stream.read().splitlines()
        assert lines == ["name,psnr,ssim,mae", "a.ppm,inf,1.0000,0.0000", "mean,inf,1.0000,0.0000"]
        assert "inf" in stdout

    def test_format_metric(self):
        assert format_metric(float("inf")) == "inf"
        assert format_metric(31.123456) == "31.1235"

    def test_missing_targets(self):
        os.remove(self.path("pairs", "target", "a.ppm"))
        code, _, _ = self.call("eval", "--model", self.checkpoint, "--pairs", self.path("pairs"))
        assert code == 3


class DegradeTest(CommandTestCase):
    def test_parse_params(self):
        assert parse_params(["sigma=2", "airlight=0.1,0.2,0.3", "beta=0.5"]) == {
            "sigma": 2,
            "airlight": (0.1, 0.2, 0.3),
            "beta": 0.5,
        }

    def test_full_transmission_keeps_image(self):
        output = self.path("hazy.ppm")
        code, _, _ = self.call(
            "degrade", "--kind", "haze", "--params", "transmission=1", "--input", self.image, "--output", output
        )
        assert code == 0
        assert self.read(output) == self.read(self.image)

    def test_seeded_snow_is_reproducible(self):
        outputs = [self.path("a.ppm"), self.path("b.ppm")]
        for output in outputs:
            assert self.call("degrade", "--kind", "snow", "--input", self.image, "--output", output, "--seed", "3")[0] == 0
        assert self.read(outputs[0]) == self.read(outputs[1])
        assert self.read(outputs[0]) != self.read(self.image)


class InspectTest(CommandTestCase):
    def test_listing(self):
        code, stdout, _ = self.call("inspect", "--model", self.checkpoint, "--size", "16")
        assert code == 0
        lines = stdout.splitlines()
        assert lines[0].split() == ["shallow.weight", "4x3x3x3"]
        assert f"parameters: {self.model.parameter_count()}" in lines
        assert f"flops at 16x16: {self.model.flops(16, 16)}" in lines

    def test_module_graph(self):
        pytest.importorskip("graphviz")
        source = generate_dot(self.model, max_depth=1).source
        assert '"model"' in source or "model " in source
        assert "encoder1" in source
        assert "encoder1.full" not in source


class TrainTest(CommandTestCase):
    def write_config(self, name):
        config = self.path(f"{name}.json")
        with open(config, "w") as stream:
            json.dump(
                {
                    "model": {"base_channels": 4, "blocks_per_stage": 1},
                    "train": {"total_steps": 2, "batch": 1, "patch": 16, "eval_every": 1},
                    "data": {"synthetic": {"count": 2, "size": 16, "degradation": {"kind": "haze"}}},
                    "out_dir": name,
                },
                stream,
            )
        return config

    def test_same_seed_same_outputs(self):
        for name in ("first", "second"):
            code, stdout, _ = self.call("train", "--config", self.write_config(name), "--seed", "7")
            assert code == 0
            assert "trained 2 steps" in stdout
        for artifact in ("model.ecfn", "loss.csv", "samples.ppm"):
            assert self.read(self.path("first", artifact)) == self.read(self.path("second", artifact))
        with open(self.path("first", "loss.csv")) as stream:
            assert stream.readline().strip() == "step,lr,loss,psnr"
