"""
Training data: seeded random streams, paired augmentation, patch sampling and
synthetic haze / blur / snow degradations.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
import os
from typing import NamedTuple

import numpy as np

from ecfnet.exceptions import DegradationError
from ecfnet.exceptions import ShapeError
from ecfnet.ops import ConvSpec
from ecfnet.ops import conv2d
from ecfnet.parallel import ordered_map
from ecfnet.ppm import load_ppm
from ecfnet.tensor import Tensor

__all__ = [
    "DEGRADATION_KINDS",
    "DegradationSpec",
    "ImagePair",
    "PairDataset",
    "Stream",
    "augment",
    "clean_image",
    "crop_box",
    "degrade",
    "load_pair_dir",
    "make_rng",
    "sample_patch",
    "synthetic_pairs",
]

logger = logging.getLogger(__name__)

DEGRADATION_KINDS = ("haze", "blur", "snow")


class Stream(enum.IntEnum):
    """Independent random streams derived from one seed"""

    INIT = 0
    BATCHES = 1
    CLEAN = 2
    DEGRADE = 3


def make_rng(seed, *stream):
    """Counter-based generator for ``(seed, *stream)``; no global state is touched"""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(key) for key in stream))
    return np.random.Generator(np.random.Philox(sequence))


class ImagePair(NamedTuple):
    degraded: Tensor
    clean: Tensor


def _check_pair(pair):
    if pair.degraded.shape != pair.clean.shape:
        raise ShapeError(f"degraded image {pair.degraded.shape} and clean image {pair.clean.shape} differ in shape")


def augment(pair, rng, flips=True):  # noqa: FBT002
    """Flip both images horizontally and vertically, each with probability 1/2"""
    _check_pair(pair)
    degraded, clean = pair.degraded.data, pair.clean.data
    for axis in (3, 2):
        if rng.random() < 0.5 and flips:  # noqa: PLR2004
            degraded = np.flip(degraded, axis=axis)
            clean = np.flip(clean, axis=axis)
    return ImagePair(Tensor(np.ascontiguousarray(degraded)), Tensor(np.ascontiguousarray(clean)))


def crop_box(height, width, size, rng):
    """Top-left corner of a uniformly drawn ``size`` x ``size`` crop"""
    if height < size or width < size:
        raise ShapeError(f"image {height}x{width} is smaller than the {size}x{size} patch")
    return int(rng.integers(0, height - size + 1)), int(rng.integers(0, width - size + 1))


def sample_patch(pair, size, rng):
    _check_pair(pair)
    top, left = crop_box(*pair.clean.shape[2:], size, rng)
    window = np.s_[:, :, top : top + size, left : left + size]
    return ImagePair(Tensor(pair.degraded.data[window].copy()), Tensor(pair.clean.data[window].copy()))


@dataclasses.dataclass(frozen=True)
class DegradationSpec:
    """
    Parameters of one synthetic degradation.

    haze: ``transmission`` t and ``airlight`` A in I = J t + A (1 - t); ``beta``
    above zero multiplies t by exp(-beta * d) with d the normalized row index.
    blur: Gaussian ``sigma`` over a ``kernel_size`` window.
    snow: ``flakes`` bright discs with radii in ``radius``, added with ``brightness``.
    """

    kind: str
    transmission: float = 0.6
    airlight: tuple = (0.8, 0.8, 0.8)
    beta: float = 0.0
    sigma: float = 1.5
    kernel_size: int = 9
    flakes: int = 40
    radius: tuple = (1.0, 3.0)
    brightness: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "airlight", tuple(float(value) for value in self.airlight))
        object.__setattr__(self, "radius", tuple(float(value) for value in self.radius))
        violations = self.violations()
        if violations:
            raise DegradationError("; ".join(violations))

    def violations(self):
        problems = []
        if self.kind not in DEGRADATION_KINDS:
            problems.append(f"kind must be one of {DEGRADATION_KINDS}, got {self.kind!r}")
        if not 0 <= self.transmission <= 1:
            problems.append(f"transmission must lie in [0, 1], got {self.transmission}")
        if len(self.airlight) != 3 or not all(0 <= value <= 1 for value in self.airlight):  # noqa: PLR2004
            problems.append(f"airlight must be three values in [0, 1], got {self.airlight}")
        if self.beta < 0:
            problems.append(f"beta must be non-negative, got {self.beta}")
        if self.sigma < 0:
            problems.append(f"sigma must be non-negative, got {self.sigma}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            problems.append(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.flakes < 0:
            problems.append(f"flakes must be non-negative, got {self.flakes}")
        if len(self.radius) != 2 or not 0 < self.radius[0] <= self.radius[1]:  # noqa: PLR2004
            problems.append(f"radius must be a (min, max) pair with 0 < min <= max, got {self.radius}")
        if not 0 <= self.brightness <= 1:
            problems.append(f"brightness must lie in [0, 1], got {self.brightness}")
        return problems

    @classmethod
    def from_dict(cls, data):
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise DegradationError(f"unknown degradation parameters: {', '.join(unknown)}")
        return cls(**data)


def gaussian_kernel(sigma, size):
    if sigma == 0:
        kernel = np.zeros(size)
        kernel[size // 2] = 1.0
        return kernel
    offsets = np.arange(size) - size // 2
    kernel = np.exp(-(offsets**2) / (2 * sigma * sigma))
    return kernel / kernel.sum()


def _haze(clean, spec):
    n, c, h, w = clean.shape
    transmission = np.full((1, 1, h, 1), spec.transmission)
    if spec.beta > 0:
        depth = np.arange(h) / max(h - 1, 1)
        transmission = transmission * np.exp(-spec.beta * depth).reshape(1, 1, h, 1)
    airlight = np.asarray(spec.airlight).reshape(1, 3, 1, 1)
    return clean * transmission + airlight * (1 - transmission)


def _blur(clean, spec):
    c = clean.shape[1]
    line = gaussian_kernel(spec.sigma, spec.kernel_size)
    kernel = np.tile(np.outer(line, line), (c, 1, 1, 1))
    image = Tensor(clean)
    spec = ConvSpec(
        weight=Tensor(kernel.astype(image.dtype)),
        padding=spec.kernel_size // 2,
        padding_mode="replicate",
        groups=c,
    )
    return conv2d(image, spec).data


def _snow(clean, spec, rng):
    n, _, h, w = clean.shape
    rows, cols = np.mgrid[0:h, 0:w]
    out = clean.copy()
    for sample in range(n):
        cover = np.zeros((h, w))
        for _ in range(spec.flakes):
            y, x = rng.uniform(0, h), rng.uniform(0, w)
            radius = rng.uniform(*spec.radius)
            inside = (rows + 0.5 - y) ** 2 + (cols + 0.5 - x) ** 2 <= radius * radius
            cover[inside] = 1.0
        out[sample] += spec.brightness * cover
    return out


def degrade(clean, spec, rng):
    """Apply ``spec`` to a clean (n, 3, h, w) image in [0, 1]; the result is clipped to [0, 1]"""
    if clean.channels != 3:  # noqa: PLR2004
        raise ShapeError(f"degradations need 3-channel images, got {clean.channels}", axis="channel")
    array = clean.data.astype(np.float64)
    if spec.kind == "haze":
        out = _haze(array, spec)
    elif spec.kind == "blur":
        out = _blur(array, spec)
    else:
        out = _snow(array, spec, rng)
    return Tensor(np.clip(out, 0, 1).astype(clean.dtype))


def clean_image(size, rng):
    """Smooth procedural RGB image: colour gradients, sinusoidal texture and a few flat shapes"""
    rows, cols = np.mgrid[0:size, 0:size] / size
    image = np.empty((3, size, size))
    for channel in range(3):
        a, b, c = rng.uniform(-0.5, 0.5, size=3)
        frequency, phase = rng.uniform(2, 8), rng.uniform(0, 2 * math.pi)
        image[channel] = 0.5 + a * rows + b * cols + 0.15 * c * np.sin(frequency * (rows + cols) * math.pi + phase)
    for _ in range(int(rng.integers(2, 5))):
        colour = rng.uniform(0, 1, size=3).reshape(3, 1, 1)
        y, x = rng.uniform(0, 1, size=2)
        radius = rng.uniform(0.08, 0.25)
        if rng.random() < 0.5:  # noqa: PLR2004
            mask = (rows - y) ** 2 + (cols - x) ** 2 <= radius * radius
        else:
            mask = (np.abs(rows - y) <= radius) & (np.abs(cols - x) <= radius)
        image = np.where(mask, colour, image)
    return np.clip(image, 0, 1)[None]


def synthetic_pairs(count, size, spec, seed, threads=None):
    """
    ``count`` (degraded, clean) pairs of ``size`` x ``size`` images.

    Pair ``i`` depends only on ``(seed, i)``, so the result does not depend on ``threads``.
    """

    def make_pair(index):
        clean = Tensor(clean_image(size, make_rng(seed, Stream.CLEAN, index)).astype(np.float32))
        return ImagePair(degrade(clean, spec, make_rng(seed, Stream.DEGRADE, index)), clean)

    pairs = ordered_map(make_pair, range(count), threads=threads)
    logger.debug("generated %d synthetic %s pairs of size %d", count, spec.kind, size)
    return pairs


def load_pair_dir(directory):
    """Read ``directory/input/*.ppm`` with the same-named ``directory/target/*.ppm``"""
    inputs = os.path.join(directory, "input")
    targets = os.path.join(directory, "target")
    for folder in (inputs, targets):
        if not os.path.isdir(folder):
            raise FileNotFoundError(f"pair directory is missing {folder}")
    names = sorted(name for name in os.listdir(inputs) if name.endswith(".ppm"))
    if not names:
        raise FileNotFoundError(f"no .ppm files in {inputs}")
    pairs = []
    for name in names:
        target = os.path.join(targets, name)
        if not os.path.exists(target):
            raise FileNotFoundError(f"no target image for {name} in {targets}")
        pair = ImagePair(load_ppm(os.path.join(inputs, name)), load_ppm(target))
        _check_pair(pair)
        pairs.append(pair)
    return names, pairs


class PairDataset:
    """Training pairs plus held-out pairs for evaluation (the training pairs when none are given)"""

    def __init__(self, train, heldout=None, names=None):
        if not train:
            raise ValueError("a dataset needs at least one training pair")
        self.train = list(train)
        self.heldout = list(heldout) if heldout else self.train
        self.names = list(names) if names else [f"pair{index:03d}" for index in range(len(self.heldout))]

    def __len__(self):
        return len(self.train)

    @classmethod
    def synthetic(cls, count, size, spec, seed, threads=None):
        return cls(synthetic_pairs(count, size, spec, seed, threads=threads))

    @classmethod
    def from_directory(cls, directory, heldout_directory=None):
        names, pairs = load_pair_dir(directory)
        if heldout_directory is None:
            return cls(pairs, names=names)
        heldout_names, heldout = load_pair_dir(heldout_directory)
        return cls(pairs, heldout, names=heldout_names)

    def sample_batch(self, batch, patch, rng, flips=True):  # noqa: FBT002
        """Draw ``batch`` random pairs, crop and flip each, and stack them"""
        degraded, clean = [], []
        for index in rng.integers(0, len(self.train), size=batch):
            pair = augment(sample_patch(self.train[int(index)], patch, rng), rng, flips=flips)
            degraded.append(pair.degraded.data)
            clean.append(pair.clean.data)
        return Tensor(np.concatenate(degraded)), Tensor(np.concatenate(clean))
