"""MSwinSR: multi-size Swin transformer blocks with a pixel-shuffle head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional as F
from .attention import MsaConfig, WindowAttention
from .layers import Conv2d, LayerNorm, Linear, Module, ModuleList
from .rng import stream
from .tensor import Tensor, concat

__all__ = ["MswinConfig", "MSTB", "Stage", "MSwinSR", "default_heads", "l1_loss"]

l1_loss = F.l1_loss


def default_heads(channels: int, preferred: int = 6) -> int:
    """Largest head count <= ``preferred`` dividing ``channels``."""
    for h in range(min(preferred, channels), 0, -1):
        if channels % h == 0:
            return h
    return 1


@dataclass
class MswinConfig:
    channels: int = 60
    depth: list[int] = field(default_factory=lambda: [2, 2, 2])
    window: int = 8
    scale: int = 4
    in_channels: int = 3
    num_heads: int | None = None

    def __post_init__(self):
        self.depth = list(self.depth)
        self.validate()

    @property
    def heads(self) -> int:
        return self.num_heads if self.num_heads is not None else default_heads(self.channels)

    def validate(self) -> None:
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if not self.depth or any((not isinstance(d, int)) or d < 1 for d in self.depth):
            raise ValueError(f"depth must be a non-empty list of positive integers, got {self.depth}")
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.window < 2 or self.window % 2:
            raise ValueError(f"window must be an even integer >= 2, got {self.window}")
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by num_heads {self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)


class MSTB(Module):
    """Four parallel window attentions (W, SW, W-1/2, SW-1/2), each followed by
    LayerNorm and a residual; the four results are concatenated, normalised
    and reduced 4C -> 2C -> C by the MLP, plus the block input."""

    VARIANTS = ((False, False), (True, False), (False, True), (True, True))

    def __init__(self, channels: int, heads: int, window: int, rng=None, dtype=None):
        c = channels
        self.msas = ModuleList(
            WindowAttention(MsaConfig(c, heads, window, shifted=s, half=hf), rng=rng, dtype=dtype)
            for s, hf in self.VARIANTS
        )
        self.norms = ModuleList(LayerNorm(c, dtype=dtype) for _ in self.VARIANTS)
        self.norm_cat = LayerNorm(4 * c, dtype=dtype)
        self.fc1 = Linear(4 * c, 2 * c, rng=rng, dtype=dtype)
        self.fc2 = Linear(2 * c, c, rng=rng, dtype=dtype)
        self.last_concat_width = None

    def forward(self, x: Tensor) -> Tensor:
        branches = [norm(msa(x)) + x for msa, norm in zip(self.msas, self.norms)]
        cat = concat(branches, axis=-1)
        self.last_concat_width = cat.shape[-1]
        return self.fc2(F.gelu(self.fc1(self.norm_cat(cat)))) + x


class Stage(Module):
    """L MSTBs, a 3x3 convolution, and a residual from the stage input."""

    def __init__(self, channels: int, n_blocks: int, heads: int, window: int, rng=None, dtype=None):
        if n_blocks < 1:
            raise ValueError("a stage needs at least one block")
        self.blocks = ModuleList(MSTB(channels, heads, window, rng=rng, dtype=dtype) for _ in range(n_blocks))
        self.conv = Conv2d(channels, channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        y = x
        for blk in self.blocks:
            y = blk(y)
        return self.conv(y) + x


def check_mswin_input(cfg: MswinConfig, h: int, w: int) -> None:
    m = cfg.window
    if h % m or w % m:
        raise ValueError(f"MSwinSR input {h}x{w} is not divisible by window {m}")


class MSwinSR(Module):
    def __init__(self, cfg: MswinConfig | None = None, seed: int = 0, rng=None, dtype=None):
        cfg = cfg or MswinConfig()
        cfg.validate()
        self.cfg = cfg
        rng = rng if rng is not None else stream(seed, "init")
        c = cfg.channels
        self.embed = Conv2d(cfg.in_channels, c, rng=rng, dtype=dtype)
        self.stages = ModuleList(Stage(c, L, cfg.heads, cfg.window, rng=rng, dtype=dtype) for L in cfg.depth)
        self.head = Conv2d(c, cfg.scale * cfg.scale * cfg.in_channels, rng=rng, dtype=dtype)

    def check_input(self, h: int, w: int) -> None:
        check_mswin_input(self.cfg, h, w)

    def forward(self, lr: Tensor) -> Tensor:
        if not isinstance(lr, Tensor):
            lr = Tensor(np.asarray(lr, dtype=self.dtype))
        if lr.ndim == 3:
            lr = lr.reshape(1, *lr.shape)
        self.check_input(lr.shape[1], lr.shape[2])
        x = self.embed(lr)
        for stage in self.stages:
            x = stage(x)
        return F.pixel_shuffle(self.head(x), self.cfg.scale)
