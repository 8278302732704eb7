"""UGSwinSR: a U-shaped Swin generator over a bicubic skip path, a Swin
discriminator, and the adversarial/pixel loss pair."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import functional as F
from .attention import MsaConfig, WindowAttention
from .layers import Conv2d, LayerNorm, Linear, Module, ModuleList, PatchExpand, PatchMerge
from .mswinsr import default_heads
from .resize import bicubic_resize
from .rng import stream
from .tensor import Tensor, concat

__all__ = [
    "UgswinConfig",
    "GanLossConfig",
    "SwinBlock",
    "SwinLayer",
    "Generator",
    "Discriminator",
    "gan_losses",
    "check_generator_input",
    "check_discriminator_size",
]


@dataclass
class UgswinConfig:
    channels: int = 60
    depth: int = 4
    window: int = 8
    scale: int = 4
    blocks_per_level: int = 2
    num_heads: int | None = None
    mlp_ratio: int = 4
    disc_channels: int | None = None

    def __post_init__(self):
        self.validate()

    def heads_at(self, channels: int) -> int:
        return default_heads(channels, self.num_heads or 6)

    def level_channels(self, k: int) -> int:
        return self.channels * 2 ** k

    @property
    def d_channels(self) -> int:
        return self.disc_channels or self.channels

    def validate(self) -> None:
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if not isinstance(self.depth, int) or self.depth < 0:
            raise ValueError(f"depth must be a non-negative integer, got {self.depth}")
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.blocks_per_level < 1:
            raise ValueError("blocks_per_level must be >= 1")
        if self.mlp_ratio < 1:
            raise ValueError("mlp_ratio must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GanLossConfig:
    lambda_pixel: float = 1.0
    lambda_adv: float = 1e-3

    def __post_init__(self):
        if self.lambda_pixel < 0 or self.lambda_adv < 0:
            raise ValueError("lambda_pixel and lambda_adv must be non-negative")
        if self.lambda_pixel == 0 and self.lambda_adv == 0:
            raise ValueError("lambda_pixel and lambda_adv cannot both be zero")


class SwinBlock(Module):
    """Pre-norm Swin layer: x + MSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, channels: int, heads: int, window: int, shifted: bool, mlp_ratio: int = 4,
                 rng=None, dtype=None):
        self.norm1 = LayerNorm(channels, dtype=dtype)
        self.attn = WindowAttention(MsaConfig(channels, heads, window, shifted=shifted), rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(channels, dtype=dtype)
        self.fc1 = Linear(channels, mlp_ratio * channels, rng=rng, dtype=dtype)
        self.fc2 = Linear(mlp_ratio * channels, channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class SwinLayer(Module):
    """Alternating W-MSA / SW-MSA blocks."""

    def __init__(self, channels: int, n_blocks: int, heads: int, window: int, mlp_ratio: int = 4,
                 rng=None, dtype=None):
        self.blocks = ModuleList(
            SwinBlock(channels, heads, window, shifted=bool(i % 2), mlp_ratio=mlp_ratio, rng=rng, dtype=dtype)
            for i in range(n_blocks)
        )

    def forward(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


class _Fuse(Module):
    def __init__(self, channels: int, rng=None, dtype=None):
        self.linear = Linear(2 * channels, channels, rng=rng, dtype=dtype)

    def forward(self, up: Tensor, skip: Tensor) -> Tensor:
        return self.linear(concat([up, skip], axis=-1))


def check_generator_input(cfg: UgswinConfig, h: int, w: int) -> None:
    f = 2 ** cfg.depth
    if h % f or w % f:
        raise ValueError(f"generator input {h}x{w} is not divisible by 2^depth = {f}")
    for k in range(cfg.depth + 1):
        hh, ww = h >> k, w >> k
        m = min(cfg.window, hh, ww)
        if hh % m or ww % m:
            raise ValueError(f"window {m} does not divide level-{k} map {hh}x{ww}")


def check_discriminator_size(cfg: UgswinConfig, hr_size: int) -> int:
    """Number of merge levels the discriminator needs for ``hr_size`` images."""
    levels, size = 0, hr_size
    while size > cfg.window:
        if size % 2 or size % cfg.window:
            raise ValueError(f"discriminator cannot window and halve extent {size} (window {cfg.window})")
        levels += 1
        size //= 2
    return levels


class Generator(Module):
    """Embed, encode with patch merging, decode with patch expanding and
    concatenated skips, then add the residual to a bicubic upsampling of the input."""

    def __init__(self, cfg: UgswinConfig | None = None, seed: int = 0, rng=None, dtype=None):
        cfg = cfg or UgswinConfig()
        cfg.validate()
        self.cfg = cfg
        rng = rng if rng is not None else stream(seed, "init")
        n, m, r = cfg.blocks_per_level, cfg.window, cfg.mlp_ratio
        self.embed = Conv2d(3, cfg.channels, rng=rng, dtype=dtype)
        self.encoders = ModuleList()
        self.merges = ModuleList()
        for k in range(cfg.depth):
            ck = cfg.level_channels(k)
            self.encoders.append(SwinLayer(ck, n, cfg.heads_at(ck), m, r, rng=rng, dtype=dtype))
            self.merges.append(PatchMerge(ck, rng=rng, dtype=dtype))
        cb = cfg.level_channels(cfg.depth)
        self.bottleneck = SwinLayer(cb, n, cfg.heads_at(cb), m, r, rng=rng, dtype=dtype)
        self.expands = ModuleList()
        self.fuses = ModuleList()
        self.decoders = ModuleList()
        for k in reversed(range(cfg.depth)):
            ck = cfg.level_channels(k)
            self.expands.append(PatchExpand(2 * ck, rng=rng, dtype=dtype))
            self.fuses.append(_Fuse(ck, rng=rng, dtype=dtype))
            self.decoders.append(SwinLayer(ck, n, cfg.heads_at(ck), m, r, rng=rng, dtype=dtype))
        self.head = Conv2d(cfg.channels, cfg.scale * cfg.scale * 3, rng=rng, dtype=dtype, zero_init=True)
        self.trace = None

    def check_input(self, h: int, w: int) -> None:
        check_generator_input(self.cfg, h, w)

    def forward(self, lr: Tensor) -> Tensor:
        if not isinstance(lr, Tensor):
            lr = Tensor(np.asarray(lr, dtype=self.dtype))
        if lr.ndim == 3:
            lr = lr.reshape(1, *lr.shape)
        b, h, w, _ = lr.shape
        self.check_input(h, w)
        trace = {"encoder": [], "decoder_skip": [], "bottleneck": None}
        x = self.embed(lr)
        skips = []
        for enc, merge in zip(self.encoders, self.merges):
            x = enc(x)
            skips.append(x)
            trace["encoder"].append(x.shape)
            x = merge(x)
        x = self.bottleneck(x)
        trace["bottleneck"] = x.shape
        for expand, fuse, dec in zip(self.expands, self.fuses, self.decoders):
            up = expand(x)
            skip = skips.pop()
            trace["decoder_skip"].append((up.shape, skip.shape))
            x = dec(fuse(up, skip))
        self.trace = trace
        s = self.cfg.scale
        residual = F.pixel_shuffle(self.head(x), s)
        return bicubic_resize(lr, s * h, s * w) + residual


class Discriminator(Module):
    """Swin blocks with patch merging until the map fits in one window,
    then LayerNorm, global average pooling and a linear logit."""

    def __init__(self, cfg: UgswinConfig | None = None, hr_size: int = 256, seed: int = 0, rng=None,
                 dtype=None):
        cfg = cfg or UgswinConfig()
        self.cfg = cfg
        self.hr_size = hr_size
        rng = rng if rng is not None else stream(seed, "disc_init")
        c = cfg.d_channels
        n, m, r = cfg.blocks_per_level, cfg.window, cfg.mlp_ratio
        self.embed = Conv2d(3, c, rng=rng, dtype=dtype)
        self.layers = ModuleList()
        self.merges = ModuleList()
        for _ in range(check_discriminator_size(cfg, hr_size)):
            self.layers.append(SwinLayer(c, n, cfg.heads_at(c), m, r, rng=rng, dtype=dtype))
            self.merges.append(PatchMerge(c, rng=rng, dtype=dtype))
            c *= 2
        self.norm = LayerNorm(c, dtype=dtype)
        self.fc = Linear(c, 1, rng=rng, dtype=dtype)

    def forward(self, img: Tensor) -> Tensor:
        if not isinstance(img, Tensor):
            img = Tensor(np.asarray(img, dtype=self.dtype))
        if img.ndim == 3:
            img = img.reshape(1, *img.shape)
        if img.shape[1] != self.hr_size or img.shape[2] != self.hr_size:
            raise ValueError(f"discriminator built for {self.hr_size}px images, got {img.shape[1]}x{img.shape[2]}")
        x = self.embed(img)
        for layer, merge in zip(self.layers, self.merges):
            x = merge(layer(x))
        x = self.norm(x).mean(axis=(1, 2))
        return self.fc(x).reshape(-1)


def gan_losses(d_real: Tensor | None, d_fake: Tensor, pred: Tensor, target, cfg: GanLossConfig) -> dict:
    """``loss_D`` (real -> 1, fake -> 0) and the non-saturating ``loss_G``.

    ``loss_D`` is omitted when ``d_real`` is None.
    """
    out = {}
    if d_real is not None:
        out["loss_D"] = F.bce_with_logits(d_real, 1.0) + F.bce_with_logits(d_fake, 0.0)
    loss_g = F.l1_loss(pred, target) * cfg.lambda_pixel
    if cfg.lambda_adv:
        loss_g = loss_g + F.bce_with_logits(d_fake, 1.0) * cfg.lambda_adv
    out["loss_G"] = loss_g
    return out
