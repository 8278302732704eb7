"""Differentiable building blocks shared by both networks.

Feature maps are channels-last ``(B, H, W, C)`` tensors throughout.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import PrecisionError, Tensor, _make, _sigmoid, _unbroadcast, add_macs, matmul

__all__ = [
    "linear",
    "conv2d",
    "layer_norm",
    "gelu",
    "pixel_shuffle",
    "window_partition",
    "window_reverse",
    "merge_gather",
    "l1_loss",
    "bce_with_logits",
]


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``(in, out)``."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input has {x.shape[-1]} features, weight expects {weight.shape[0]}")
    lead = x.shape[:-1]
    y = matmul(x.reshape(-1, x.shape[-1]), weight)
    if bias is not None:
        y = y + bias
    return y.reshape(*lead, weight.shape[1])


def _im2col(xp: np.ndarray, kh: int, kw: int, h: int, w: int) -> np.ndarray:
    b, _, _, c = xp.shape
    cols = np.empty((b, h, w, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + h, j:j + w, :]
    return cols.reshape(b * h * w, kh * kw * c)


def _col2im(cols: np.ndarray, shape: tuple[int, ...], kh: int, kw: int, h: int, w: int) -> np.ndarray:
    b, _, _, c = shape
    out = np.zeros(shape, dtype=cols.dtype)
    cols = cols.reshape(b, h, w, kh, kw, c)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + h, j:j + w, :] += cols[:, :, :, i, j, :]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    """Stride-1 cross-correlation of ``x (B,H,W,Cin)`` with ``weight (kh,kw,Cin,Cout)``.

    ``padding`` defaults to ``kh // 2`` so odd kernels preserve H and W.
    """
    kh, kw, cin, cout = weight.shape
    if x.ndim != 4:
        raise ValueError(f"conv2d expects (B,H,W,C) input, got shape {x.shape}")
    if x.shape[-1] != cin:
        raise ValueError(f"conv2d channel mismatch: input has {x.shape[-1]} channels, kernel expects {cin}")
    if x.dtype != weight.dtype:
        raise PrecisionError(f"cannot combine {x.dtype} and {weight.dtype} tensors in one graph")
    p = kh // 2 if padding is None else padding
    b, h, w, _ = x.shape
    oh, ow = h + 2 * p - kh + 1, w + 2 * p - kw + 1
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    cols = _im2col(xp, kh, kw, oh, ow)
    wmat = weight.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    add_macs(b * oh * ow * kh * kw * cin * cout)
    pshape = xp.shape

    def back(g):
        g2 = g.reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gxp = _col2im(g2 @ wmat.T, pshape, kh, kw, oh, ow)
            gx = gxp[:, p:p + h, p:p + w, :] if p else gxp
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out.reshape(b, oh, ow, cout), parents, back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the per-channel affine map."""
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def back(g):
        gx = gg = gbeta = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = rstd / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                             - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = _unbroadcast(g * xhat, gamma.shape)
        if beta.requires_grad:
            gbeta = _unbroadcast(g, beta.shape)
        return gx, gg, gbeta

    return _make(out, (x, gamma, beta), back)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    a = x.data
    inner = _GELU_C * (a + 0.044715 * a ** 3)
    t = np.tanh(inner)
    out = 0.5 * a * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * dinner),)

    return _make(out, (x,), back)


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Move channel ``c*s*s + dy*s + dx`` at (h, w) to channel c at (s*h+dy, s*w+dx)."""
    b, h, w, cs = x.shape
    if cs % (s * s):
        raise ValueError(f"pixel_shuffle: {cs} channels not divisible by scale^2 = {s * s}")
    c = cs // (s * s)
    if s == 1:
        return x
    y = x.reshape(b, h, w, c, s, s).permute(0, 1, 4, 2, 5, 3)
    return y.reshape(b, h * s, w * s, c)


def window_partition(x: Tensor, m: int) -> Tensor:
    """Split ``(B,H,W,C)`` into ``(B*(H/m)*(W/m), m*m, C)`` non-overlapping tiles."""
    b, h, w, c = x.shape
    if h % m or w % m:
        raise ValueError(f"window size {m} does not divide feature map {h}x{w}")
    y = x.reshape(b, h // m, m, w // m, m, c).permute(0, 1, 3, 2, 4, 5)
    return y.reshape(b * (h // m) * (w // m), m * m, c)


def window_reverse(windows: Tensor, m: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    if h % m or w % m:
        raise ValueError(f"window size {m} does not divide feature map {h}x{w}")
    nw = (h // m) * (w // m)
    c = windows.shape[-1]
    b = windows.shape[0] // nw
    y = windows.reshape(b, h // m, w // m, m, m, c).permute(0, 1, 3, 2, 4, 5)
    return y.reshape(b, h, w, c)


def merge_gather(x: Tensor) -> Tensor:
    """Stack each 2x2 neighbourhood into 4C channels.

    Order: top-left, bottom-left, top-right, bottom-right.
    """
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"patch merging needs even extents, got {h}x{w}")
    # (b, h/2, dy, w/2, dx, c) -> (b, h/2, w/2, dx, dy, c): dx-major gives TL, BL, TR, BR
    y = x.reshape(b, h // 2, 2, w // 2, 2, c).permute(0, 1, 3, 4, 2, 5)
    return y.reshape(b, h // 2, w // 2, 4 * c)


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute difference over every element."""
    if isinstance(target, Tensor):
        tshape = target.shape
    else:
        target = np.asarray(target)
        tshape = target.shape
    if tuple(pred.shape) != tuple(tshape):
        raise ValueError(f"l1_loss shape mismatch: {pred.shape} vs {tshape}")
    return (pred - target).abs().mean()


def bce_with_logits(logits: Tensor, target: float) -> Tensor:
    """Mean binary cross-entropy against a constant label, computed stably."""
    z = logits.data
    loss = np.maximum(z, 0) - z * target + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def back(g):
        return ((_sigmoid(z) - target) * (g / n)).astype(z.dtype),

    return _make(np.asarray(loss.mean(), dtype=z.dtype), (logits,), back)
