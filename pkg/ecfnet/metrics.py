from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ecfnet.exceptions import ShapeError
from ecfnet.tensor import Tensor

__all__ = [
    "mae",
    "psnr",
    "ssim",
]


def _arrays(pred, target):
    pred = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    return pred.astype(np.float64), target.astype(np.float64)


def psnr(pred, target, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``math.inf`` for a perfect match"""
    pred, target = _arrays(pred, target)
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak * peak / mse)


def mae(pred, target):
    pred, target = _arrays(pred, target)
    return float(np.mean(np.abs(pred - target)))


def _gaussian_window(size, sigma):
    offsets = np.arange(size) - (size - 1) / 2
    window = np.exp(-(offsets**2) / (2 * sigma * sigma))
    return window / window.sum()


def _filter_valid(planes, window):
    rows = sliding_window_view(planes, window.size, axis=-1) @ window
    return sliding_window_view(rows, window.size, axis=-2) @ window


def ssim(pred, target, peak=1.0, window_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """
    Structural similarity with a Gaussian window, computed on every channel
    and averaged over all valid window positions and channels.
    """
    pred, target = _arrays(pred, target)
    height, width = pred.shape[-2:]
    if height < window_size or width < window_size:
        raise ShapeError(f"ssim needs images of at least {window_size}x{window_size}, got {height}x{width}")
    window = _gaussian_window(window_size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    mu_x = _filter_valid(pred, window)
    mu_y = _filter_valid(target, window)
    sigma_x = _filter_valid(pred * pred, window) - mu_x * mu_x
    sigma_y = _filter_valid(target * target, window) - mu_y * mu_y
    sigma_xy = _filter_valid(pred * target, window) - mu_x * mu_y

    numerator = (2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2)
    return float(np.mean(numerator / denominator))
