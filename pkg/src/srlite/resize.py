"""Bicubic (Catmull-Rom, a = -0.5) resampling.

The resize is separable: one ``(out, in)`` weight matrix per axis.  Output
pixel ``i`` samples source coordinate ``(i + 0.5) * in / out - 0.5`` with four
taps; taps falling outside the image are clamped to the border pixel.  No
extra anti-alias widening is applied when shrinking.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .tensor import Tensor, _macs_suspended, _make

A = -0.5


def keys_kernel(x, a: float = A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=64)
def _weights(n_in: int, n_out: int) -> np.ndarray:
    w = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    rows = np.arange(n_out)
    for k in (-1, 0, 1, 2):
        idx = np.clip(base + k, 0, n_in - 1)
        np.add.at(w, (rows, idx), keys_kernel(frac - k))
    w.setflags(write=False)
    return w


def resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """Return the read-only ``(n_out, n_in)`` float64 resampling matrix."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resize extents must be >= 1, got {n_in} -> {n_out}")
    return _weights(int(n_in), int(n_out))


def resize_array(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize ``(H, W, C)`` or ``(B, H, W, C)`` arrays; keeps the input dtype."""
    arr = np.asarray(img)
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected (H,W,C) or (B,H,W,C) image, got shape {np.shape(img)}")
    dtype = arr.dtype if arr.dtype in (np.float32, np.float64, np.longdouble) else np.float64
    wy = resize_weights(arr.shape[1], out_h).astype(dtype)
    wx = resize_weights(arr.shape[2], out_w).astype(dtype)
    x = np.ascontiguousarray(arr.astype(dtype, copy=False).transpose(0, 3, 1, 2))
    y = wy @ x @ wx.T
    out = np.ascontiguousarray(y.transpose(0, 2, 3, 1))
    return out[0] if squeeze else out


def bicubic_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Differentiable bicubic resize of a ``(B,H,W,C)`` tensor.

    Interpolation is not counted as multiply-adds by the complexity counter.
    """
    if x.ndim != 4:
        raise ValueError(f"bicubic_resize expects (B,H,W,C), got shape {x.shape}")
    wy = resize_weights(x.shape[1], out_h).astype(x.dtype)
    wx = resize_weights(x.shape[2], out_w).astype(x.dtype)
    with _macs_suspended():
        out = resize_array(x.data, out_h, out_w)

    def back(g):
        gt = np.ascontiguousarray(g.transpose(0, 3, 1, 2))
        gx = wy.T @ gt @ wx
        return (np.ascontiguousarray(gx.transpose(0, 2, 3, 1)),)

    return _make(out, (x,), back)
