"""Objective image quality metrics on float images in [0, 1]."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

__all__ = ["psnr", "ssim", "gaussian_window"]


def _as_image(x) -> np.ndarray:
    data = getattr(x, "data", x)
    return np.asarray(data, dtype=np.float64)


def psnr(a, b, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all channels; ``inf`` when identical."""
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


@lru_cache(maxsize=8)
def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalised 1-D Gaussian taps."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    g /= g.sum()
    g.setflags(write=False)
    return g


def _gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.ndim == 3:
        return img.mean(axis=-1)
    raise ValueError(f"expected (H,W) or (H,W,C) image, got shape {img.shape}")


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    h, w = img.shape
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g  # (h-k+1, w)
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g  # (h-k+1, w-k+1)


def ssim(a, b, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity with a Gaussian window over valid positions.

    Colour images are reduced to the mean of their channels first.  Batched
    ``(B,H,W,C)`` inputs return the mean over the batch.
    """
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 4:
        return float(np.mean([ssim(x, y, data_range, win_size, sigma, k1, k2) for x, y in zip(a, b)]))
    x, y = _gray(a), _gray(b)
    if x.shape[0] < win_size or x.shape[1] < win_size:
        raise ValueError(f"image {x.shape[0]}x{x.shape[1]} is smaller than the {win_size}x{win_size} SSIM window")
    g = gaussian_window(win_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))
