"""
Neural primitives on NCHW tensors.

Every function validates its shapes, computes with numpy and, when a tape is
active, records a node so the result can be differentiated.
"""

from __future__ import annotations

import contextlib
import dataclasses
import math
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ecfnet.exceptions import NonFiniteInput
from ecfnet.exceptions import ShapeError
from ecfnet.tensor import AXES
from ecfnet.tensor import Function
from ecfnet.tensor import Tensor
from ecfnet.tensor import channel_slice

__all__ = [
    "PADDING_MODES",
    "ConvSpec",
    "apply_filter_bank",
    "avg_downsample",
    "conv2d",
    "count_flops",
    "fft2d",
    "ifft2d",
    "layer_norm",
    "pixel_shuffle_up",
    "reduce_max",
    "reduce_mean",
    "resize_bilinear",
    "softmax",
    "unfold",
]

PADDING_MODES = ("zeros", "replicate")

_AXIS_NAMES = {name: index for index, name in enumerate(AXES)}

_flops = threading.local()


class FlopCounter:
    def __init__(self):
        self.macs = 0

    @property
    def flops(self):
        return 2 * self.macs


@contextlib.contextmanager
def count_flops():
    """Accumulate the multiply-adds of convolutions and filter applications run inside the block"""
    counter = FlopCounter()
    previous = getattr(_flops, "counter", None)
    _flops.counter = counter
    try:
        yield counter
    finally:
        _flops.counter = previous


def _add_macs(macs):
    counter = getattr(_flops, "counter", None)
    if counter is not None:
        counter.macs += int(macs)


def _pad(x, padding, mode):
    if padding == 0:
        return x
    width = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    return np.pad(x, width, mode="constant" if mode == "zeros" else "edge")


def _unpad(grad, padding, mode):
    """Adjoint of ``_pad``: replicate padding folds the border copies back onto the edges"""
    if padding == 0:
        return grad
    p = padding
    if mode == "zeros":
        return np.ascontiguousarray(grad[:, :, p:-p, p:-p])
    rows = grad[:, :, p:-p, :].copy()
    rows[:, :, 0, :] += grad[:, :, :p, :].sum(axis=2)
    rows[:, :, -1, :] += grad[:, :, -p:, :].sum(axis=2)
    out = rows[:, :, :, p:-p].copy()
    out[:, :, :, 0] += rows[:, :, :, :p].sum(axis=3)
    out[:, :, :, -1] += rows[:, :, :, -p:].sum(axis=3)
    return out


@dataclasses.dataclass
class ConvSpec:
    """
    Kernel, bias and geometry of one convolution.

    ``weight`` is (out_c, in_c / groups, kh, kw) and ``bias`` (1, out_c, 1, 1) or None.
    """

    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0
    padding_mode: str = "zeros"
    groups: int = 1

    def __post_init__(self):
        out_c = self.weight.shape[0]
        if self.groups < 1 or out_c % self.groups:
            raise ShapeError(f"out_c={out_c} is not divisible by groups={self.groups}", axis="channel")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")
        if self.padding_mode not in PADDING_MODES:
            raise ValueError(f"padding_mode must be one of {PADDING_MODES}, got {self.padding_mode!r}")
        if self.bias is not None and self.bias.shape != (1, out_c, 1, 1):
            raise ShapeError(f"bias must have shape {(1, out_c, 1, 1)}, got {self.bias.shape}", axis="channel")

    @property
    def in_channels(self):
        return self.weight.shape[1] * self.groups

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def depthwise(self):
        return self.groups == self.in_channels == self.out_channels


class Conv2d(Function):
    def forward(self, x, weight, bias, stride, padding, padding_mode, groups):
        xp = _pad(x, padding, padding_mode)
        n, c, hp, wp = xp.shape
        out_c, group_c, kh, kw = weight.shape
        oh, ow = (hp - kh) // stride + 1, (wp - kw) // stride + 1
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        self.cols = windows.reshape(n, groups, group_c, oh, ow, kh, kw)
        self.kernels = weight.reshape(groups, out_c // groups, group_c, kh, kw)
        self.geometry = x.shape, xp.shape, stride, padding, padding_mode, groups
        _add_macs(n * out_c * oh * ow * group_c * kh * kw)
        out = np.einsum("ngcyxij,gocij->ngoyx", self.cols, self.kernels, optimize=True)
        return out.reshape(n, out_c, oh, ow) + bias

    def backward(self, grad):
        x_shape, padded_shape, stride, padding, padding_mode, groups = self.geometry
        n, out_c, oh, ow = grad.shape
        _, _, group_c, _, _, kh, kw = self.cols.shape
        grouped = grad.reshape(n, groups, out_c // groups, oh, ow)
        grad_bias = grad.sum(axis=(0, 2, 3)).reshape(1, out_c, 1, 1)
        grad_weight = np.einsum("ngoyx,ngcyxij->gocij", grouped, self.cols, optimize=True)
        dcols = np.einsum("ngoyx,gocij->ngcyxij", grouped, self.kernels, optimize=True)
        dcols = dcols.reshape(n, x_shape[1], oh, ow, kh, kw)
        grad_padded = np.zeros(padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += dcols[
                    ..., i, j
                ]
        grad_input = _unpad(grad_padded, padding, padding_mode)
        return grad_input, grad_weight.reshape(out_c, group_c, kh, kw), grad_bias


def conv2d(x, spec):
    """
    2-D convolution of ``x`` with ``spec``.

    Output shape is (n, out_c, (h + 2p - kh) // stride + 1, (w + 2p - kw) // stride + 1).
    """
    if x.channels != spec.in_channels:
        raise ShapeError(
            f"input has {x.channels} channels but the kernel expects {spec.in_channels}",
            axis="channel",
        )
    kh, kw = spec.weight.shape[2:]
    for axis, size, kernel in (("height", x.shape[2], kh), ("width", x.shape[3], kw)):
        if size + 2 * spec.padding < kernel:
            raise ShapeError(f"{axis} {size} with padding {spec.padding} is smaller than kernel {kernel}", axis=axis)
    bias = spec.bias if spec.bias is not None else Tensor.zeros((1, spec.out_channels, 1, 1), dtype=spec.weight.dtype)
    return Conv2d.apply(
        x,
        spec.weight,
        bias,
        stride=spec.stride,
        padding=spec.padding,
        padding_mode=spec.padding_mode,
        groups=spec.groups,
    )


class Unfold(Function):
    def forward(self, x, k, padding_mode):
        p = (k - 1) // 2
        n, c, h, w = x.shape
        xp = _pad(x, p, padding_mode)
        self.geometry = x.shape, xp.shape, k, padding_mode
        windows = sliding_window_view(xp, (k, k), axis=(2, 3))
        return np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, h, w)

    def backward(self, grad):
        x_shape, padded_shape, k, padding_mode = self.geometry
        n, c, h, w = x_shape
        patches = grad.reshape(n, c, k, k, h, w)
        grad_padded = np.zeros(padded_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                grad_padded[:, :, i : i + h, j : j + w] += patches[:, :, i, j]
        return (_unpad(grad_padded, (k - 1) // 2, padding_mode),)


def unfold(x, k, padding_mode="replicate"):
    """
    im2col with "same" padding.

    Channel ``ci * k * k + dy * k + dx`` of the output at pixel (y, x) holds
    input channel ``ci`` at (y + dy - k // 2, x + dx - k // 2).
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"unfold needs an odd kernel size, got {k}")
    if padding_mode not in PADDING_MODES:
        raise ValueError(f"padding_mode must be one of {PADDING_MODES}, got {padding_mode!r}")
    return Unfold.apply(x, k=k, padding_mode=padding_mode)


def _normalize_axes(axes):
    if isinstance(axes, (int, str)):
        axes = (axes,)
    normalized = set()
    for axis in axes:
        index = _AXIS_NAMES.get(axis, axis) if isinstance(axis, str) else int(axis)
        if isinstance(index, str) or index not in (1, 2, 3):
            raise ValueError(f"cannot reduce over axis {axis!r}, use channel, height or width")
        normalized.add(index)
    if not normalized:
        raise ValueError("reduction needs at least one axis")
    return tuple(sorted(normalized))


class ReduceMean(Function):
    def forward(self, x, axes):
        self.shape = x.shape
        self.count = math.prod(x.shape[axis] for axis in axes)
        return x.mean(axis=axes, keepdims=True, dtype=x.dtype)

    def backward(self, grad):
        return (np.broadcast_to(grad / grad.dtype.type(self.count), self.shape).copy(),)


class ReduceMax(Function):
    def forward(self, x, axes):
        keep = [axis for axis in range(4) if axis not in axes]
        order = keep + list(axes)
        moved = x.transpose(order)
        flat = moved.reshape(*moved.shape[: len(keep)], -1)
        winners = flat.argmax(axis=-1)
        mask = np.zeros_like(flat)
        np.put_along_axis(mask, winners[..., None], 1, axis=-1)
        self.mask = mask.reshape(moved.shape).transpose(np.argsort(order))
        return x.max(axis=axes, keepdims=True)

    def backward(self, grad):
        return (grad * self.mask,)


def reduce_mean(x, axes):
    return ReduceMean.apply(x, axes=_normalize_axes(axes))


def reduce_max(x, axes):
    """Maximum over ``axes``; the gradient goes to the first argmax in row-major order"""
    return ReduceMax.apply(x, axes=_normalize_axes(axes))


class LayerNorm(Function):
    def forward(self, x, gain, bias, eps):
        mean = x.mean(axis=1, keepdims=True)
        centered = x - mean
        variance = (centered * centered).mean(axis=1, keepdims=True)
        self.inv_std = 1 / np.sqrt(variance + x.dtype.type(eps))
        self.normalized = centered * self.inv_std
        self.gain = gain
        return self.normalized * gain + bias

    def backward(self, grad):
        xhat = self.normalized
        dxhat = grad * self.gain
        grad_x = self.inv_std * (
            dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        grad_gain = (grad * xhat).sum(axis=(0, 2, 3), keepdims=True)
        grad_bias = grad.sum(axis=(0, 2, 3), keepdims=True)
        return grad_x, grad_gain, grad_bias


def layer_norm(x, gain, bias, eps=1e-6):
    """Per-pixel normalization over the channel axis followed by a per-channel affine map"""
    expected = (1, x.channels, 1, 1)
    for name, tensor in (("gain", gain), ("bias", bias)):
        if tensor.shape != expected:
            raise ShapeError(f"layer norm {name} must have shape {expected}, got {tensor.shape}", axis="channel")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return LayerNorm.apply(x, gain, bias, eps=eps)


class Softmax(Function):
    def forward(self, x, axis):
        if np.isnan(x).any():
            raise NonFiniteInput("softmax received NaN input")
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        self.axis = axis
        self.y = shifted / shifted.sum(axis=axis, keepdims=True)
        return self.y

    def backward(self, grad):
        return (self.y * (grad - (grad * self.y).sum(axis=self.axis, keepdims=True)),)


def softmax(x, axis):
    axis = _AXIS_NAMES.get(axis, axis) if isinstance(axis, str) else int(axis)
    if axis not in (0, 1, 2, 3):
        raise ValueError(f"unknown axis {axis!r}")
    return Softmax.apply(x, axis=axis)


class AvgDownsample(Function):
    def forward(self, x, r):
        n, c, h, w = x.shape
        self.r = r
        return x.reshape(n, c, h // r, r, w // r, r).mean(axis=(3, 5), dtype=x.dtype)

    def backward(self, grad):
        r = self.r
        spread = np.repeat(np.repeat(grad, r, axis=2), r, axis=3)
        return (spread / grad.dtype.type(r * r),)


def avg_downsample(x, r):
    """Non-overlapping r x r mean pooling"""
    if r < 1:
        raise ValueError(f"downsampling ratio must be positive, got {r}")
    for axis, size in (("height", x.shape[2]), ("width", x.shape[3])):
        if size % r:
            raise ShapeError(f"{axis} {size} is not divisible by the downsampling ratio {r}", axis=axis)
    return AvgDownsample.apply(x, r=r)


class PixelShuffle(Function):
    def forward(self, x, r):
        n, channels, h, w = x.shape
        c = channels // (r * r)
        self.r = r
        return x.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def backward(self, grad):
        r = self.r
        n, c, hr, wr = grad.shape
        h, w = hr // r, wr // r
        unshuffled = grad.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
        return (np.ascontiguousarray(unshuffled).reshape(n, c * r * r, h, w),)


def pixel_shuffle_up(x, r):
    """
    Depth-to-space: output[:, ci, y * r + dy, x * r + dx] = input[:, ci * r * r + dy * r + dx, y, x].
    """
    if r < 1:
        raise ValueError(f"upsampling ratio must be positive, got {r}")
    if x.channels % (r * r):
        raise ShapeError(f"{x.channels} channels are not divisible by r * r = {r * r}", axis="channel")
    return PixelShuffle.apply(x, r=r)


def _interpolation_matrix(source, target, dtype):
    """Half-pixel bilinear weights (align_corners=False), shape (target, source)"""
    position = (np.arange(target, dtype=np.float64) + 0.5) * (source / target) - 0.5
    position = np.clip(position, 0, source - 1)
    lower = np.floor(position).astype(np.int64)
    upper = np.minimum(lower + 1, source - 1)
    fraction = position - lower
    matrix = np.zeros((target, source), dtype=np.float64)
    rows = np.arange(target)
    np.add.at(matrix, (rows, lower), 1 - fraction)
    np.add.at(matrix, (rows, upper), fraction)
    return matrix.astype(dtype)


class ResizeBilinear(Function):
    def forward(self, x, height, width):
        self.rows = _interpolation_matrix(x.shape[2], height, x.dtype)
        self.cols = _interpolation_matrix(x.shape[3], width, x.dtype)
        return np.einsum("yh,nchw,xw->ncyx", self.rows, x, self.cols, optimize=True)

    def backward(self, grad):
        return (np.einsum("yh,ncyx,xw->nchw", self.rows, grad, self.cols, optimize=True),)


def resize_bilinear(x, height, width):
    if height < 1 or width < 1:
        raise ShapeError(f"cannot resize to {(height, width)}")
    if (height, width) == x.shape[2:]:
        return x
    return ResizeBilinear.apply(x, height=height, width=width)


def _bit_reversal(n):
    bits = n.bit_length() - 1
    indices = np.arange(n)
    reversed_indices = np.zeros(n, dtype=np.int64)
    for bit in range(bits):
        reversed_indices |= ((indices >> bit) & 1) << (bits - 1 - bit)
    return reversed_indices


def _fft_last_axis(values, inverse=False):  # noqa: FBT002
    """Iterative radix-2 Cooley-Tukey over the last axis, unnormalized"""
    n = values.shape[-1]
    lead = values.shape[:-1]
    out = values[..., _bit_reversal(n)].astype(np.complex128)
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return out


def _fft2(values, inverse=False):  # noqa: FBT002
    rows = _fft_last_axis(values, inverse=inverse)
    return _fft_last_axis(rows.swapaxes(-1, -2), inverse=inverse).swapaxes(-1, -2)


def _check_power_of_two(shape):
    for axis, size in (("height", shape[2]), ("width", shape[3])):
        if size < 1 or size & (size - 1):
            raise ShapeError(f"fft needs power-of-two sides, {axis} is {size}", axis=axis)


class FFT2(Function):
    def forward(self, x):
        self.channels = x.shape[1]
        spectrum = _fft2(x)
        return np.concatenate([spectrum.real, spectrum.imag], axis=1).astype(x.dtype)

    def backward(self, grad):
        c = self.channels
        adjoint = grad[:, :c] - 1j * grad[:, c:]
        return (_fft2(adjoint).real.astype(grad.dtype),)


def fft2d(x):
    """Unnormalized forward 2-D DFT of every (n, c) plane, returned as a (real, imag) pair"""
    _check_power_of_two(x.shape)
    stacked = FFT2.apply(x)
    c = x.channels
    return channel_slice(stacked, 0, c), channel_slice(stacked, c, 2 * c)


def ifft2d(real, imag):
    """Inverse of ``fft2d`` (normalized by h * w); not recorded on the tape"""
    _check_power_of_two(real.shape)
    if real.shape != imag.shape:
        raise ShapeError(f"real part {real.shape} and imaginary part {imag.shape} differ")
    h, w = real.shape[2:]
    values = _fft2(real.data + 1j * imag.data, inverse=True) / (h * w)
    return Tensor(values.real.astype(real.dtype)), Tensor(values.imag.astype(real.dtype))


class FilterBankApply(Function):
    def forward(self, patches, filters, groups):
        n, ckk, h, w = patches.shape
        taps = filters.shape[2]
        c = ckk // taps
        self.grouped = patches.reshape(n, groups, c // groups, taps, h, w)
        self.filters = filters.reshape(n, groups, taps)
        self.filters_shape = filters.shape
        _add_macs(n * c * h * w * taps)
        return np.einsum("ngctyx,ngt->ngcyx", self.grouped, self.filters, optimize=True).reshape(n, c, h, w)

    def backward(self, grad):
        n, groups, group_c, taps, h, w = self.grouped.shape
        grouped_grad = grad.reshape(n, groups, group_c, h, w)
        grad_patches = np.einsum("ngcyx,ngt->ngctyx", grouped_grad, self.filters, optimize=True)
        grad_filters = np.einsum("ngcyx,ngctyx->ngt", grouped_grad, self.grouped, optimize=True)
        return grad_patches.reshape(n, groups * group_c * taps, h, w), grad_filters.reshape(self.filters_shape)


def apply_filter_bank(patches, filters):
    """
    Filter unfolded patches with one k x k filter per (sample, channel group).

    ``patches`` is the (n, c * k * k, h, w) output of ``unfold``; ``filters`` is
    (n, g, k * k, 1). Channels are split into g contiguous groups.
    """
    n, groups, taps, one = filters.shape
    if one != 1:
        raise ShapeError(f"filters must have shape (n, g, k * k, 1), got {filters.shape}", axis="width")
    if patches.shape[0] != n:
        raise ShapeError(f"{patches.shape[0]} patch samples but {n} filter banks", axis="batch")
    if patches.channels % taps:
        raise ShapeError(f"{patches.channels} patch channels are not a multiple of {taps} taps", axis="channel")
    channels = patches.channels // taps
    if channels % groups:
        raise ShapeError(f"{channels} channels are not divisible into {groups} groups", axis="channel")
    return FilterBankApply.apply(patches, filters, groups=groups)
