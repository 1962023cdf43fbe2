from __future__ import annotations

from ecfnet.exceptions import ShapeError
from ecfnet.ops import ConvSpec
from ecfnet.ops import conv2d
from ecfnet.ops import layer_norm
from ecfnet.ops import pixel_shuffle_up
from ecfnet.tensor import Parameter

__all__ = [
    "Conv2d",
    "LayerNorm2d",
    "Module",
    "PixelShuffleUp",
    "Sequential",
]


class Module:
    """
    Parameter container.

    Parameters and sub-modules are discovered from instance attributes in
    assignment order, which fixes the registry order used for initialization
    and serialization.
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{index}", item

    def named_modules(self, prefix=""):
        yield prefix, self
        for name, child in self._children():
            if isinstance(child, Module):
                yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix=""):
        seen = set()
        for module_name, module in self.named_modules(prefix):
            for name, child in module._children():
                if isinstance(child, Parameter) and id(child) not in seen:
                    seen.add(id(child))
                    yield (f"{module_name}.{name}" if module_name else name), child

    def parameters(self):
        return [parameter for _, parameter in self.named_parameters()]

    def parameter_count(self):
        return sum(parameter.data.size for parameter in self.parameters())

    def reset_parameters(self, rng):
        for _, parameter in self.named_parameters():
            parameter.reset(rng)

    def zero_grad(self):
        for parameter in self.parameters():
            parameter.zero_grad()


class Conv2d(Module):
    """
    Convolution layer owning its kernel and bias.

    ``padding`` defaults to ``kernel_size // 2`` ("same" output for stride 1).
    ``weight_init`` is ``"fan_in"`` (uniform) or ``"zeros"``.
    """

    def __init__(
        self,
        in_channels,
        out_channels,
        kernel_size,
        stride=1,
        padding=None,
        padding_mode="zeros",
        groups=1,
        bias=True,  # noqa: FBT002
        weight_init="fan_in",
    ):
        if in_channels % groups:
            raise ShapeError(f"in_channels={in_channels} is not divisible by groups={groups}", axis="channel")
        if out_channels % groups:
            raise ShapeError(f"out_channels={out_channels} is not divisible by groups={groups}", axis="channel")
        group_channels = in_channels // groups
        self.weight = Parameter(
            (out_channels, group_channels, kernel_size, kernel_size),
            init=weight_init,
            fan_in=group_channels * kernel_size * kernel_size,
        )
        self.bias = Parameter((1, out_channels, 1, 1)) if bias else None
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.padding_mode = padding_mode
        self.groups = groups

    @classmethod
    def depthwise(cls, channels, kernel_size):
        return cls(channels, channels, kernel_size, groups=channels)

    @property
    def spec(self):
        return ConvSpec(
            weight=self.weight,
            bias=self.bias,
            stride=self.stride,
            padding=self.padding,
            padding_mode=self.padding_mode,
            groups=self.groups,
        )

    def forward(self, x):
        return conv2d(x, self.spec)


class LayerNorm2d(Module):
    def __init__(self, channels, eps=1e-6):
        self.gain = Parameter((1, channels, 1, 1), init="ones")
        self.bias = Parameter((1, channels, 1, 1))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias, self.eps)


class PixelShuffleUp(Module):
    """Learnable upsampling: 1x1 convolution to out_channels * r * r, then depth-to-space"""

    def __init__(self, in_channels, out_channels, ratio):
        self.expand = Conv2d(in_channels, out_channels * ratio * ratio, 1)
        self.ratio = ratio

    def forward(self, x):
        return pixel_shuffle_up(self.expand(x), self.ratio)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def __len__(self):
        return len(self.layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
