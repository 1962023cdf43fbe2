from __future__ import annotations

import dataclasses

import numpy as np

from ecfnet.exceptions import InvalidConfig
from ecfnet.exceptions import ShapeError
from ecfnet.ops import ConvSpec
from ecfnet.ops import conv2d
from ecfnet.ops import fft2d
from ecfnet.ops import resize_bilinear
from ecfnet.tensor import Tensor
from ecfnet.tensor import mean_all
from ecfnet.tensor import pad_to
from ecfnet.tensor import sqrt
from ecfnet.tensor import square
from ecfnet.tensor import sum_all
from ecfnet.tensor import tensor_abs

__all__ = [
    "LAPLACIAN",
    "LossWeights",
    "charbonnier",
    "edge_loss",
    "freq_loss",
    "laplacian",
    "make_targets",
    "total_loss",
]

LAPLACIAN = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)
REDUCTIONS = ("mean", "norm")


@dataclasses.dataclass(frozen=True)
class LossWeights:
    """
    ``eps`` of the Charbonnier terms, ``lam`` on the frequency term and ``delta``
    on the edge term.
    """

    eps: float = 0.001
    lam: float = 0.1
    delta: float = 0.05
    reduction: str = "mean"

    def __post_init__(self):
        problems = []
        if self.eps <= 0:
            problems.append(f"eps must be positive, got {self.eps}")
        if self.lam < 0:
            problems.append(f"lambda must be non-negative, got {self.lam}")
        if self.delta < 0:
            problems.append(f"delta must be non-negative, got {self.delta}")
        if self.reduction not in REDUCTIONS:
            problems.append(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")
        if problems:
            raise InvalidConfig(violations=problems)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig(violations=[f"unknown loss key {key!r}" for key in unknown])
        return cls(**data)


def _check_same_shape(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ in shape")


def charbonnier(pred, target, eps=0.001, reduction="mean"):
    """
    Mean of sqrt(d^2 + eps^2) over every element, or with ``reduction="norm"``
    sqrt(||d||^2 + eps^2) over the whole tensor.
    """
    _check_same_shape(pred, target)
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")
    diff = pred - target
    if reduction == "norm":
        return sqrt(sum_all(square(diff)) + eps * eps)
    return mean_all(sqrt(square(diff) + eps * eps))


def laplacian(x):
    """Per-channel 3x3 Laplacian with replicate padding"""
    kernel = np.tile(LAPLACIAN, (x.channels, 1, 1, 1)).astype(x.dtype)
    return conv2d(x, ConvSpec(weight=Tensor(kernel), padding=1, padding_mode="replicate", groups=x.channels))


def edge_loss(pred, target, eps=0.001, reduction="mean"):
    _check_same_shape(pred, target)
    return charbonnier(laplacian(pred), laplacian(target), eps=eps, reduction=reduction)


def _next_power_of_two(size):
    return 1 << (size - 1).bit_length()


def freq_loss(pred, target):
    """
    Mean absolute difference of the real and imaginary parts of the 2-D DFTs,
    after zero padding both images to power-of-two sides.
    """
    _check_same_shape(pred, target)
    height, width = (_next_power_of_two(size) for size in pred.shape[2:])
    pred_real, pred_imag = fft2d(pad_to(pred, height, width))
    target_real, target_imag = fft2d(pad_to(target, height, width))
    return (mean_all(tensor_abs(pred_real - target_real)) + mean_all(tensor_abs(pred_imag - target_imag))) * 0.5


def make_targets(ground_truth, outputs):
    """Ground truth resized (bilinear) to the resolution of every output head"""
    return [resize_bilinear(ground_truth, *output.shape[2:]) for output in outputs]


def total_loss(outputs, targets, weights=None):
    """Sum over heads of charbonnier + delta * edge + lam * frequency"""
    weights = weights or LossWeights()
    if len(outputs) != len(targets):
        raise ValueError(f"{len(outputs)} outputs but {len(targets)} targets")
    if not outputs:
        raise ValueError("total_loss needs at least one output")
    total = None
    for output, target in zip(outputs, targets):
        term = charbonnier(output, target, eps=weights.eps, reduction=weights.reduction)
        if weights.delta:
            term = term + edge_loss(output, target, eps=weights.eps, reduction=weights.reduction) * weights.delta
        if weights.lam:
            term = term + freq_loss(output, target) * weights.lam
        total = term if total is None else total + term
    return total
