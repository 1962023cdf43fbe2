"""
Restoration blocks: spatial and frequency attention (SDAM, FDAM, SFAM) and the
gated convolution blocks of the multi-scale backbone (SCABlock, MSFBlock,
MSSFBlock, MSBlock, ConvS).
"""

from __future__ import annotations

from typing import NamedTuple

from ecfnet.exceptions import InvalidConfig
from ecfnet.exceptions import ShapeError
from ecfnet.nn import Conv2d
from ecfnet.nn import LayerNorm2d
from ecfnet.nn import Module
from ecfnet.nn import PixelShuffleUp
from ecfnet.nn import Sequential
from ecfnet.ops import apply_filter_bank
from ecfnet.ops import avg_downsample
from ecfnet.ops import reduce_max
from ecfnet.ops import reduce_mean
from ecfnet.ops import softmax
from ecfnet.ops import unfold
from ecfnet.tensor import Parameter
from ecfnet.tensor import channel_slice
from ecfnet.tensor import concat
from ecfnet.tensor import reshape
from ecfnet.tensor import sigmoid

__all__ = [
    "CHANNEL_GATES",
    "FDAM",
    "MSFB",
    "SCAB",
    "SDAM",
    "SFAM",
    "SFAM_MODES",
    "ConvS",
    "FrequencySplit",
    "MSBlock",
    "MSFBlock",
    "MSSFBlock",
    "SCABlock",
    "simple_gate",
]

SPATIAL = ("height", "width")
CHANNEL_GATES = ("identity", "sigmoid")
SFAM_MODES = ("dual", "sdam_fdam", "fdam_sdam", "sdam", "fdam")


def simple_gate(x):
    """Split channels into two halves and multiply them"""
    if x.channels % 2:
        raise ShapeError(f"simple gate needs an even channel count, got {x.channels}", axis="channel")
    half = x.channels // 2
    return channel_slice(x, 0, half) * channel_slice(x, half, x.channels)


class SDAM(Module):
    """
    Spatial domain attention.

    F_SD = S' * dwc7(dwc5(F)) + C' * F + dwc3(F), with S' a one-channel map
    computed from the channel-wise mean and max of F and C' a per-channel score
    computed from the spatial mean of F.
    """

    def __init__(self, channels, channel_gate="identity"):
        if channel_gate not in CHANNEL_GATES:
            raise InvalidConfig(violations=[f"channel_gate must be one of {CHANNEL_GATES}, got {channel_gate!r}"])
        self.spatial = Conv2d(2, 1, 3)
        self.depthwise5 = Conv2d.depthwise(channels, 5)
        self.depthwise7 = Conv2d.depthwise(channels, 7)
        self.channel = Conv2d(channels, channels, 1)
        self.shortcut = Conv2d.depthwise(channels, 3)
        self.channel_gate = channel_gate

    def spatial_map(self, f):
        pooled = concat([reduce_mean(f, "channel"), reduce_max(f, "channel")])
        return self.spatial(pooled)

    def channel_score(self, f):
        score = self.channel(reduce_mean(f, SPATIAL))
        return sigmoid(score) if self.channel_gate == "sigmoid" else score

    def forward(self, f):
        located = self.spatial_map(f) * self.depthwise7(self.depthwise5(f))
        patterned = self.channel_score(f) * f
        return located + patterned + self.shortcut(f)


class FrequencySplit(NamedTuple):
    low: object
    high: object
    filters: object


class FDAM(Module):
    """
    Frequency domain attention.

    A bank of ``groups`` normalized k x k low-pass filters is predicted per
    sample from the spatial mean of the input; the low-pass response is
    subtracted to isolate high frequencies, which then gate the input.
    """

    def __init__(self, channels, kernel_size=3, groups=8):
        violations = []
        if kernel_size < 1 or kernel_size % 2 == 0:
            violations.append(f"fdam kernel size must be odd, got {kernel_size}")
        if groups < 1 or channels % groups:
            violations.append(f"{channels} channels are not divisible into {groups} filter groups")
        if violations:
            raise InvalidConfig(violations=violations)
        self.kernel_size = kernel_size
        self.groups = groups
        taps = groups * kernel_size * kernel_size
        self.filter_conv = Conv2d(channels, taps, 1)
        self.filter_norm = LayerNorm2d(taps)

    def filter_bank(self, f):
        """(n, g, k * k, 1) filters; each k x k filter is nonnegative and sums to 1"""
        logits = self.filter_norm(self.filter_conv(reduce_mean(f, SPATIAL)))
        logits = reshape(logits, (f.shape[0], self.groups, self.kernel_size * self.kernel_size, 1))
        return softmax(logits, axis=2)

    def decompose(self, f):
        filters = self.filter_bank(f)
        low = apply_filter_bank(unfold(f, self.kernel_size, "replicate"), filters)
        return FrequencySplit(low=low, high=f - low, filters=filters)

    def forward(self, f):
        high = self.decompose(f).high
        return high * f + f


class SFAM(Module):
    """
    Dual-order spatial/frequency attention: W * SDAM(FDAM(F)) + FDAM(SDAM(F)).

    With ``shared`` both orders reuse one SDAM and one FDAM. ``mode`` keeps a
    single branch or a single module for ablations.
    """

    def __init__(self, channels, kernel_size=3, groups=8, shared=True, mode="dual", channel_gate="identity"):  # noqa: FBT002
        if mode not in SFAM_MODES:
            raise InvalidConfig(violations=[f"sfam mode must be one of {SFAM_MODES}, got {mode!r}"])
        self.sdam = SDAM(channels, channel_gate=channel_gate)
        self.fdam = FDAM(channels, kernel_size=kernel_size, groups=groups)
        if not shared:
            self.sdam_second = SDAM(channels, channel_gate=channel_gate)
            self.fdam_second = FDAM(channels, kernel_size=kernel_size, groups=groups)
        self.weight = Parameter((1, channels, 1, 1), init="ones")
        self.shared = shared
        self.mode = mode

    def first_branch(self, f):
        return self.sdam(self.fdam(f))

    def second_branch(self, f):
        if self.shared:
            return self.fdam(self.sdam(f))
        return self.fdam_second(self.sdam_second(f))

    def forward(self, f):
        if self.mode == "sdam":
            return self.sdam(f)
        if self.mode == "fdam":
            return self.fdam(f)
        if self.mode == "fdam_sdam":
            return self.second_branch(f)
        weighted = self.weight * self.first_branch(f)
        if self.mode == "sdam_fdam":
            return weighted
        return weighted + self.second_branch(f)


class SCABlock(Module):
    """
    X_s = X + beta * conv1(X' * conv1(GAP(X'))) with X' = SG(dwc3(conv1(LN(X)))).

    ``beta`` is a per-channel residual scale that starts at zero, so a freshly
    built block is the identity.
    """

    def __init__(self, channels):
        self.norm = LayerNorm2d(channels)
        self.expand = Conv2d(channels, 2 * channels, 1)
        self.depthwise = Conv2d.depthwise(2 * channels, 3)
        self.attention = Conv2d(channels, channels, 1)
        self.project = Conv2d(channels, channels, 1)
        self.beta = Parameter((1, channels, 1, 1))

    def branch(self, x):
        gated = simple_gate(self.depthwise(self.expand(self.norm(x))))
        return self.project(gated * self.attention(reduce_mean(gated, SPATIAL)))

    def forward(self, x):
        return x + self.beta * self.branch(x)


class MSFBlock(Module):
    """
    Multi-scale feed-forward block with crossed 3x3 / 5x5 depthwise paths.

    Like ``SCABlock`` the branch enters the residual through a zero-initialized
    per-channel scale ``gamma``.
    """

    def __init__(self, channels):
        double = 2 * channels
        self.norm = LayerNorm2d(channels)
        self.expand_small = Conv2d(channels, double, 1)
        self.depthwise_small = Conv2d.depthwise(double, 3)
        self.expand_large = Conv2d(channels, double, 1)
        self.depthwise_large = Conv2d.depthwise(double, 5)
        self.cross_small = Conv2d.depthwise(double, 3)
        self.cross_large = Conv2d.depthwise(double, 5)
        self.project = Conv2d(double, channels, 1)
        self.gamma = Parameter((1, channels, 1, 1))

    def branch(self, xs):
        normed = self.norm(xs)
        top = simple_gate(self.depthwise_small(self.expand_small(normed)))
        bottom = simple_gate(self.depthwise_large(self.expand_large(normed)))
        fused = concat(
            [
                simple_gate(self.cross_small(concat([top, bottom]))),
                simple_gate(self.cross_large(concat([bottom, top]))),
            ]
        )
        return self.project(fused)

    def forward(self, xs):
        return xs + self.gamma * self.branch(xs)


SCAB = SCABlock
MSFB = MSFBlock


class MSSFBlock(Module):
    """F' = F + SCAB(F); out = F' + MSFB(F'), on top of the inner residuals of both blocks"""

    def __init__(self, channels):
        self.sca = SCABlock(channels)
        self.msf = MSFBlock(channels)

    def forward(self, f):
        f = f + self.sca(f)
        return f + self.msf(f)


class MSBlock(Module):
    """
    Three-branch multi-resolution block.

    Branches run N SCABlocks and one MSFBlock at full, 1/2 and 1/4 resolution;
    the 1/4 branch also receives the 1/2 branch output. Branch outputs are
    brought back to full resolution with learnable pixel-shuffle upsampling
    and summed.
    """

    def __init__(self, channels, num_blocks):
        if num_blocks < 1:
            raise InvalidConfig(violations=[f"MSBlock needs at least one SCABlock per branch, got {num_blocks}"])
        self.full = self._branch(channels, num_blocks)
        self.half = self._branch(channels, num_blocks)
        self.quarter = self._branch(channels, num_blocks)
        self.up_half = PixelShuffleUp(channels, channels, 2)
        self.up_quarter = PixelShuffleUp(channels, channels, 4)
        self.num_blocks = num_blocks

    @staticmethod
    def _branch(channels, num_blocks):
        return Sequential(*[SCABlock(channels) for _ in range(num_blocks)], MSFBlock(channels))

    def forward(self, x):
        for axis, size in (("height", x.shape[2]), ("width", x.shape[3])):
            if size % 4:
                raise ShapeError(f"MSBlock needs {axis} divisible by 4, got {size}", axis=axis)
        x1 = self.full(x)
        x2 = self.half(avg_downsample(x, 2))
        x3 = self.quarter(avg_downsample(x, 4) + avg_downsample(x2, 2))
        return x1 + self.up_half(x2) + self.up_quarter(x3)


class ConvS(Module):
    """
    Shallow features of a low-resolution input image.

    ``gated``: 3x3 conv to ``channels``, 1x1 expansion to twice that, simple gate.
    ``single``: the 3x3 conv alone.
    """

    variants = ("gated", "single")

    def __init__(self, channels, variant="gated"):
        if variant not in self.variants:
            raise InvalidConfig(violations=[f"convs variant must be one of {self.variants}, got {variant!r}"])
        self.conv = Conv2d(3, channels, 3)
        if variant == "gated":
            self.expand = Conv2d(channels, 2 * channels, 1)
        self.variant = variant

    def forward(self, image):
        x = self.conv(image)
        if self.variant == "gated":
            x = simple_gate(self.expand(x))
        return x
