"""Window multi-head self-attention in its four flavours.

``W-MSA``  regular windows of size M
``SW-MSA`` windows of size M after a cyclic shift of M // 2, with a region mask
``-1/2``   the same with window M // 2 (and shift M // 4 when shifted)

Windows are clamped to the feature map (``m = min(m, H, W)``) so deep U-Net
levels with tiny maps stay valid.  When a window covers the whole map the
shift is dropped, since there is no neighbouring window to exchange with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import functional as F
from .layers import Linear, Module, Parameter, trunc_normal
from .tensor import Tensor, get_default_dtype, roll, softmax

MASK_VALUE = -1e9

__all__ = [
    "MsaConfig",
    "WindowAttention",
    "build_shift_mask",
    "rel_bias_index",
    "MASK_VALUE",
]


@dataclass(frozen=True)
class MsaConfig:
    channels: int
    num_heads: int
    window: int
    shifted: bool = False
    half: bool = False
    rel_bias: bool = True

    def __post_init__(self):
        if self.channels % self.num_heads:
            raise ValueError(f"channels {self.channels} not divisible by num_heads {self.num_heads}")
        if self.nominal_window < 1:
            raise ValueError(f"effective window must be >= 1 (window={self.window}, half={self.half})")

    @property
    def nominal_window(self) -> int:
        return self.window // 2 if self.half else self.window

    @property
    def name(self) -> str:
        return ("SW-MSA" if self.shifted else "W-MSA") + ("-1/2" if self.half else "")


@lru_cache(maxsize=None)
def rel_bias_index(m: int, table_m: int | None = None) -> np.ndarray:
    """``(m*m, m*m)`` indices into a ``(2*table_m - 1)**2`` relative-bias table."""
    if m < 1:
        raise ValueError("window must be >= 1")
    t = m if table_m is None else table_m
    if t < m:
        raise ValueError(f"bias table for window {t} cannot serve window {m}")
    ys, xs = np.divmod(np.arange(m * m), m)
    dy = ys[:, None] - ys[None, :]
    dx = xs[:, None] - xs[None, :]
    idx = (dy + t - 1) * (2 * t - 1) + (dx + t - 1)
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=64)
def _shift_mask(h: int, w: int, m: int, shift: int) -> np.ndarray:
    if h % m or w % m:
        raise ValueError(f"window {m} does not divide {h}x{w}")
    nw = (h // m) * (w // m)
    if shift == 0:
        out = np.zeros((nw, m * m, m * m))
        out.setflags(write=False)
        return out
    region = np.zeros((h, w), dtype=np.int64)
    cuts_h = (slice(0, h - m), slice(h - m, h - shift), slice(h - shift, h))
    cuts_w = (slice(0, w - m), slice(w - m, w - shift), slice(w - shift, w))
    rid = 0
    for sh in cuts_h:
        for sw in cuts_w:
            region[sh, sw] = rid
            rid += 1
    win = region.reshape(h // m, m, w // m, m).transpose(0, 2, 1, 3).reshape(nw, m * m)
    out = np.where(win[:, :, None] != win[:, None, :], MASK_VALUE, 0.0)
    out.setflags(write=False)
    return out


def build_shift_mask(h: int, w: int, m: int, shift: int) -> np.ndarray:
    """Additive attention mask ``(num_windows, m*m, m*m)`` for a cyclically shifted map.

    Entries are 0 where both positions come from the same pre-shift region and
    ``MASK_VALUE`` otherwise.
    """
    if not 0 <= shift < m:
        raise ValueError(f"shift must lie in [0, {m}), got {shift}")
    return _shift_mask(int(h), int(w), int(m), int(shift))


class WindowAttention(Module):
    """One MSA block operating on ``(B, H, W, C)`` feature maps."""

    def __init__(self, cfg: MsaConfig, rng=None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        c = cfg.channels
        self.q = Linear(c, c, rng=rng, dtype=dtype)
        self.k = Linear(c, c, rng=rng, dtype=dtype)
        self.v = Linear(c, c, rng=rng, dtype=dtype)
        self.proj = Linear(c, c, rng=rng, dtype=dtype)
        m = cfg.nominal_window
        if cfg.rel_bias:
            self.rel_bias_table = Parameter(
                trunc_normal(rng, ((2 * m - 1) ** 2, cfg.num_heads), dtype=dtype or get_default_dtype()))
        else:
            self.rel_bias_table = None
        self.apply_mask = True
        self.attn_hook = None

    def geometry(self, h: int, w: int) -> tuple[int, int]:
        """Effective (window, shift) on an ``h x w`` map."""
        m = min(self.cfg.nominal_window, h, w)
        if h % m or w % m:
            raise ValueError(f"{self.cfg.name}: window {m} does not divide feature map {h}x{w}")
        shift = m // 2 if self.cfg.shifted and (m < h or m < w) else 0
        return m, shift

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        heads = self.cfg.num_heads
        d = c // heads
        m, shift = self.geometry(h, w)
        n = m * m
        if shift:
            x = roll(x, (-shift, -shift), (1, 2))
        win = F.window_partition(x, m)
        bw = win.shape[0]
        nw = bw // b

        def split_heads(t: Tensor) -> Tensor:
            return t.reshape(bw, n, heads, d).permute(0, 2, 1, 3)

        q = split_heads(self.q(win)) * (1.0 / math.sqrt(d))
        k = split_heads(self.k(win))
        v = split_heads(self.v(win))
        attn = q @ k.transpose(-2, -1)
        if self.rel_bias_table is not None:
            idx = rel_bias_index(m, self.cfg.nominal_window)
            bias = self.rel_bias_table[idx.reshape(-1)].reshape(n, n, heads).permute(2, 0, 1)
            attn = attn + bias
        if shift and self.apply_mask:
            mask = build_shift_mask(h, w, m, shift).astype(x.dtype)
            attn = attn.reshape(b, nw, heads, n, n) + mask[None, :, None]
            attn = attn.reshape(bw, heads, n, n)
        attn = softmax(attn, axis=-1)
        if self.attn_hook is not None:
            self.attn_hook(attn.data)
        out = (attn @ v).permute(0, 2, 1, 3).reshape(bw, n, c)
        out = self.proj(out)
        out = F.window_reverse(out, m, h, w)
        if shift:
            out = roll(out, (shift, shift), (1, 2))
        return out
