from __future__ import annotations

import csv
import dataclasses
import logging
import math
from typing import NamedTuple

import numpy as np

from ecfnet.data import Stream
from ecfnet.data import make_rng
from ecfnet.exceptions import InvalidConfig
from ecfnet.exceptions import NonFiniteInput
from ecfnet.exceptions import TrainingDiverged
from ecfnet.losses import LossWeights
from ecfnet.losses import make_targets
from ecfnet.losses import total_loss
from ecfnet.metrics import psnr
from ecfnet.optim import Adam
from ecfnet.optim import cosine_lr
from ecfnet.parallel import ordered_map
from ecfnet.signals import post_step
from ecfnet.signals import pre_step
from ecfnet.tensor import Tape
from ecfnet.tensor import Tensor

__all__ = [
    "LossLog",
    "StepRecord",
    "TrainConfig",
    "evaluate",
    "sample_grid",
    "train_loop",
]

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    lr_init: float = 8e-4
    lr_final: float = 1e-6
    total_steps: int = 200
    batch: int = 4
    patch: int = 64
    flips: bool = True
    seed: int = 7
    eval_every: int = 10
    log_every: int = 10
    loss: LossWeights = dataclasses.field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossWeights.from_dict(self.loss))
        problems = []
        if not 0 < self.lr_final <= self.lr_init:
            problems.append(f"need 0 < lr_final <= lr_init, got {self.lr_final} and {self.lr_init}")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                problems.append(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.total_steps < 0:
            problems.append(f"total_steps must be non-negative, got {self.total_steps}")
        if self.batch < 1:
            problems.append(f"batch must be positive, got {self.batch}")
        if self.patch < 16 or self.patch % 16:  # noqa: PLR2004
            problems.append(f"patch must be a positive multiple of 16, got {self.patch}")
        if self.eval_every < 1:
            problems.append(f"eval_every must be positive, got {self.eval_every}")
        if self.log_every < 1:
            problems.append(f"log_every must be positive, got {self.log_every}")
        if problems:
            raise InvalidConfig(violations=problems)

    @classmethod
    def from_dict(cls, data):
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig(violations=[f"unknown train key {key!r}" for key in unknown])
        return cls(**data)


class StepRecord(NamedTuple):
    step: int
    lr: float
    loss: float
    psnr: float | None


def _format_psnr(value):
    if value is None:
        return ""
    if math.isinf(value):
        return "inf"
    return repr(value)


class LossLog:
    """Per-step training records, written as CSV ``step,lr,loss,psnr``"""

    header = ("step", "lr", "loss", "psnr")

    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record):
        self.records.append(record)

    @property
    def losses(self):
        return [record.loss for record in self.records]

    def smoothed(self, window=20):
        """Trailing moving average of the loss"""
        losses = np.asarray(self.losses)
        return [float(losses[max(0, end - window) : end].mean()) for end in range(1, len(losses) + 1)]

    def rows(self):
        for record in self.records:
            yield str(record.step), repr(record.lr), repr(record.loss), _format_psnr(record.psnr)

    def to_csv(self, path):
        with open(path, "w", newline="") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(self.header)
            writer.writerows(self.rows())


def evaluate(model, pairs, threads=None):
    """Mean PSNR of the model's full-resolution output over ``pairs``"""
    scores = ordered_map(lambda pair: psnr(model.restore(pair.degraded), pair.clean), pairs, threads=threads)
    return float(np.mean(scores))


def _first_nan(named_grads):
    for name, grad in named_grads.items():
        if not np.all(np.isfinite(grad)):
            return name
    return None


def _first_nan_output(model, outputs):
    names = getattr(model, "head_names", None) or [f"output{index}" for index in range(len(outputs))]
    for name, output in zip(names, outputs):
        if not np.all(np.isfinite(output.data)):
            return name
    return None


def train_loop(model, dataset, config, log=None):
    """
    Optimize ``model`` on ``dataset`` for ``config.total_steps`` steps.

    Each step samples a batch of augmented patches, runs the forward pass on a
    fresh tape, backpropagates the total loss over every head and applies one
    Adam update at the cosine-annealed learning rate. Held-out PSNR is measured
    every ``eval_every`` steps and after the last step.
    """
    log = LossLog() if log is None else log
    rng = make_rng(config.seed, Stream.BATCHES)
    optimizer = Adam(model.named_parameters(), beta1=config.beta1, beta2=config.beta2)
    sender = model.__class__

    for index in range(config.total_steps):
        step = index + 1
        lr = cosine_lr(index, config.total_steps, config.lr_init, config.lr_final)
        degraded, clean = dataset.sample_batch(config.batch, config.patch, rng, flips=config.flips)
        pre_step.send(sender=sender, model=model, step=step, lr=lr)

        with Tape() as tape:
            try:
                outputs = model(degraded)
            except NonFiniteInput as error:
                raise TrainingDiverged(f"non-finite activations at step {step}: {error}", step=step) from error
            loss = total_loss(outputs, make_targets(clean, outputs), config.loss)
        grads = optimizer.named_grads(tape.backward(loss, accumulate=False))
        value = loss.item()

        parameter = _first_nan(grads)
        if parameter is not None or not math.isfinite(value):
            output = _first_nan_output(model, outputs)
            raise TrainingDiverged(
                f"loss is {value} at step {step}; first non-finite gradient: {parameter or 'none'}; "
                f"first non-finite output: {output or 'none (the loss itself overflowed)'}",
                step=step,
                parameter=parameter,
                output=output,
            )
        optimizer.step(grads, lr)

        score = None
        if step % config.eval_every == 0 or step == config.total_steps:
            score = evaluate(model, dataset.heldout)
        log.append(StepRecord(step, lr, value, score))
        if step % config.log_every == 0 or step == config.total_steps:
            logger.info("step=%d lr=%.3g loss=%.6f psnr=%s", step, lr, value, _format_psnr(score) or "-")
        post_step.send(sender=sender, model=model, step=step, lr=lr, loss=value, psnr=score)

    return model, log


def sample_grid(model, pairs):
    """Rows of degraded | restored | clean images for ``pairs``, clipped to [0, 1]"""
    rows = []
    for pair in pairs:
        restored = np.clip(model.restore(pair.degraded).data, 0, 1)
        rows.append(np.concatenate([pair.degraded.data, restored, pair.clean.data], axis=3))
    return Tensor(np.concatenate(rows, axis=2))
