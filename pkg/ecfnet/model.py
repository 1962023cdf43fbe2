"""
The three-scale multi-input / multi-output restoration network.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from ecfnet.blocks import CHANNEL_GATES
from ecfnet.blocks import SFAM
from ecfnet.blocks import SFAM_MODES
from ecfnet.blocks import ConvS
from ecfnet.blocks import MSBlock
from ecfnet.blocks import MSSFBlock
from ecfnet.blocks import SCABlock
from ecfnet.data import Stream
from ecfnet.data import make_rng
from ecfnet.exceptions import InvalidConfig
from ecfnet.exceptions import ShapeError
from ecfnet.nn import Conv2d
from ecfnet.nn import LayerNorm2d
from ecfnet.nn import Module
from ecfnet.nn import PixelShuffleUp
from ecfnet.nn import Sequential
from ecfnet.ops import count_flops
from ecfnet.ops import resize_bilinear
from ecfnet.tensor import Tensor
from ecfnet.tensor import concat
from ecfnet.tensor import default_dtype

__all__ = [
    "TASK_BLOCKS",
    "ECFNet",
    "ModelConfig",
    "build",
]

logger = logging.getLogger(__name__)

TASK_BLOCKS = {"dehaze": 4, "deblur": 8, "desnow": 8}
INPUT_MULTIPLE = 16


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """
    Widths, depths and ablation switches of the network.

    Scale channels are (c0, 2 c0, 4 c0); ``fdam_groups`` must divide 4 c0.
    """

    base_channels: int = 16
    blocks_per_stage: int = 2
    fdam_kernel: int = 3
    fdam_groups: int = 8
    n_output_heads: int = 3
    sfam_count: int = 1
    sfam_mode: str = "dual"
    sfam_shared: bool = True
    channel_gate: str = "identity"
    convs_variant: str = "gated"
    use_msblock: bool = True
    use_mssfblock: bool = True
    task: str | None = None

    def __post_init__(self):
        violations = self.violations()
        if violations:
            raise InvalidConfig(violations=violations)

    def violations(self):
        problems = []
        if self.base_channels < 1:
            problems.append(f"base_channels must be positive, got {self.base_channels}")
        if self.blocks_per_stage < 1:
            problems.append(f"blocks_per_stage must be positive, got {self.blocks_per_stage}")
        if self.fdam_kernel < 1 or self.fdam_kernel % 2 == 0:
            problems.append(f"fdam_kernel must be odd and positive, got {self.fdam_kernel}")
        if self.fdam_groups < 1 or (4 * self.base_channels) % self.fdam_groups:
            problems.append(
                f"fdam_groups={self.fdam_groups} must divide the bottleneck width {4 * self.base_channels}"
            )
        if self.n_output_heads not in (3, 4):
            problems.append(f"n_output_heads must be 3 or 4, got {self.n_output_heads}")
        if self.sfam_count < 0:
            problems.append(f"sfam_count must be non-negative, got {self.sfam_count}")
        if self.sfam_mode not in SFAM_MODES:
            problems.append(f"sfam_mode must be one of {SFAM_MODES}, got {self.sfam_mode!r}")
        if self.channel_gate not in CHANNEL_GATES:
            problems.append(f"channel_gate must be one of {CHANNEL_GATES}, got {self.channel_gate!r}")
        if self.convs_variant not in ConvS.variants:
            problems.append(f"convs_variant must be one of {ConvS.variants}, got {self.convs_variant!r}")
        if self.task is not None and self.task not in TASK_BLOCKS:
            problems.append(f"task must be one of {tuple(TASK_BLOCKS)}, got {self.task!r}")
        return problems

    @property
    def scale_channels(self):
        return self.base_channels, 2 * self.base_channels, 4 * self.base_channels

    @classmethod
    def for_task(cls, task, **overrides):
        if task not in TASK_BLOCKS:
            raise InvalidConfig(violations=[f"task must be one of {tuple(TASK_BLOCKS)}, got {task!r}"])
        overrides.setdefault("blocks_per_stage", TASK_BLOCKS[task])
        return cls(task=task, **overrides)

    @classmethod
    def from_dict(cls, data):
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig(violations=[f"unknown model key {key!r}" for key in unknown])
        data = dict(data)
        task = data.pop("task", None)
        if task is not None:
            return cls.for_task(task, **data)
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)


class ECFNet(Module):
    """
    Encoder-decoder restoration network.

    ``forward`` returns one restored image per output head, each the input
    image (resized to the head's scale) plus a predicted residual: full, 1/2
    and 1/4 resolution, preceded by a refined full-resolution image when the
    config asks for four heads.

    The scale-2 and scale-3 stages end in a layer norm, which brings the
    residual stream of the stacked MSSFBlocks back to unit scale before it
    reaches the bottleneck, the decoder and the heads. Residual heads start at
    zero, so a freshly built model returns its input.
    """

    def __init__(self, config):
        self.config = config
        c1, c2, c3 = config.scale_channels

        self.shallow = Conv2d(3, c1, 3)
        self.encoder1 = self._full_resolution_stage(c1)
        self.down1 = Conv2d(c1, c2, 3, stride=2)
        self.convs2 = ConvS(c2, variant=config.convs_variant)
        self.merge2 = Conv2d(2 * c2, c2, 1)
        self.encoder2 = self._stage(c2)
        self.down2 = Conv2d(c2, c3, 3, stride=2)
        self.convs3 = ConvS(c3, variant=config.convs_variant)
        self.merge3 = Conv2d(2 * c3, c3, 1)
        self.encoder3 = self._stage(c3)

        self.bottleneck = Sequential(
            *[
                SFAM(
                    c3,
                    kernel_size=config.fdam_kernel,
                    groups=config.fdam_groups,
                    shared=config.sfam_shared,
                    mode=config.sfam_mode,
                    channel_gate=config.channel_gate,
                )
                for _ in range(config.sfam_count)
            ]
        )

        self.decoder3 = self._stage(c3)
        self.head3 = Conv2d(c3, 3, 3, weight_init="zeros")
        self.up2 = PixelShuffleUp(c3, c2, 2)
        self.skip2 = Conv2d(2 * c2, c2, 1)
        self.decoder2 = self._stage(c2)
        self.head2 = Conv2d(c2, 3, 3, weight_init="zeros")
        self.up1 = PixelShuffleUp(c2, c1, 2)
        self.skip1 = Conv2d(2 * c1, c1, 1)
        self.decoder1 = self._full_resolution_stage(c1)
        self.head1 = Conv2d(c1, 3, 3, weight_init="zeros")

        if config.n_output_heads == 4:  # noqa: PLR2004
            self.refine = Sequential(*[SCABlock(c1) for _ in range(config.blocks_per_stage)])
            self.head_refine = Conv2d(c1, 3, 3, weight_init="zeros")

    def _full_resolution_stage(self, channels):
        if self.config.use_msblock:
            return MSBlock(channels, self.config.blocks_per_stage)
        return Sequential(*[SCABlock(channels) for _ in range(self.config.blocks_per_stage)])

    def _stage(self, channels):
        block = MSSFBlock if self.config.use_mssfblock else SCABlock
        blocks = [block(channels) for _ in range(self.config.blocks_per_stage)]
        return Sequential(*blocks, LayerNorm2d(channels))

    @property
    def head_names(self):
        """Attribute names of the residual heads, in output order"""
        names = ["head1", "head2", "head3"]
        if self.config.n_output_heads == 4:  # noqa: PLR2004
            names.insert(0, "head_refine")
        return names

    @property
    def heads(self):
        return [getattr(self, name) for name in self.head_names]

    def check_input(self, image):
        if image.channels != 3:  # noqa: PLR2004
            raise ShapeError(f"expected a 3-channel image, got {image.channels} channels", axis="channel")
        for axis, size in (("height", image.shape[2]), ("width", image.shape[3])):
            if size == 0 or size % INPUT_MULTIPLE:
                raise ShapeError(f"image {axis} must be a positive multiple of {INPUT_MULTIPLE}, got {size}", axis=axis)

    def forward(self, image):
        self.check_input(image)
        h, w = image.shape[2:]
        image_half = resize_bilinear(image, h // 2, w // 2)
        image_quarter = resize_bilinear(image, h // 4, w // 4)

        e1 = self.encoder1(self.shallow(image))
        x = self.merge2(concat([self.down1(e1), self.convs2(image_half)]))
        e2 = self.encoder2(x)
        x = self.merge3(concat([self.down2(e2), self.convs3(image_quarter)]))
        x = self.bottleneck(self.encoder3(x))

        d3 = self.decoder3(x)
        d2 = self.decoder2(self.skip2(concat([self.up2(d3), e2])))
        d1 = self.decoder1(self.skip1(concat([self.up1(d2), e1])))
        outputs = [
            self.head1(d1) + image,
            self.head2(d2) + image_half,
            self.head3(d3) + image_quarter,
        ]
        if self.config.n_output_heads == 4:  # noqa: PLR2004
            outputs.insert(0, self.head_refine(self.refine(d1)) + image)
        return outputs

    def restore(self, image):
        """Full-resolution output of the first head"""
        return self(image)[0]

    def zero_residual_heads(self):
        for head in self.heads:
            head.weight.assign(np.zeros_like(head.weight.data))
            head.bias.assign(np.zeros_like(head.bias.data))

    def flops(self, height, width):
        """Analytic FLOPs (2 x multiply-adds) of one forward pass on a single height x width image"""
        with count_flops() as counter:
            self(Tensor.zeros((1, 3, height, width), dtype=self.shallow.weight.dtype))
        return counter.flops


def build(config, seed=0, dtype=np.float32):
    """Construct an ``ECFNet`` and initialize every parameter from ``seed`` in registry order"""
    with default_dtype(dtype):
        model = ECFNet(config)
    model.reset_parameters(make_rng(seed, Stream.INIT))
    logger.debug("built ECFNet with %d parameters (seed %d)", model.parameter_count(), seed)
    return model
