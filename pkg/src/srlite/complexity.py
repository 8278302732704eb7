"""Parameter and multiply-add accounting.

Three independent routes are offered:

* closed-form cost formulas for a W-MSA layer, a SwinIR residual block and a
  U-Net downsampling stage (``eval_formula``);
* closed-form parameter/multiply-add counts derived from a model config
  (``params_analytic``, ``multiadds_analytic``);
* empirical counts from a constructed model: summing parameter sizes and
  tallying the multiply-accumulates issued by one traced forward pass.

Multiply-adds count one MAC per scalar product inside matmul, linear,
convolution and attention kernels.  Softmax, LayerNorm, bias additions,
elementwise ops and the bicubic skip path are not counted.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .layers import Module
from .mswinsr import MSwinSR, MswinConfig
from .tensor import Tensor, count_macs, no_grad
from .ugswinsr import Discriminator, Generator, UgswinConfig

__all__ = [
    "FORMULAS",
    "eval_formula",
    "count_params",
    "count_multiadds",
    "count_msa",
    "params_analytic",
    "multiadds_analytic",
    "ComplexityReport",
    "analyze",
]


def _wmsa(h, w, c, m):
    return 4 * h * w * c * c + 2 * m * m * h * w * c


def _rstb(h, w, c, m):
    return 81 * h * w * c * c + 12 * (m * m + 1) * h * w * c


def _stage(h, w, c, m):
    return Fraction(37, 8) * h * w * c * c + (Fraction(3, 4) * m * m + Fraction(13, 16)) * h * w * c


FORMULAS = {"WMSA": _wmsa, "RSTB": _rstb, "Stage": _stage}


def eval_formula(kind: str, h: int, w: int, C: int, M: int) -> int:
    """Evaluate a cost formula exactly; fractional results round half up."""
    try:
        fn = FORMULAS[kind]
    except KeyError:
        raise ValueError(f"unknown formula {kind!r}; choose from {sorted(FORMULAS)}") from None
    for name, v in (("h", h), ("w", w), ("C", C), ("M", M)):
        if not isinstance(v, (int, np.integer)) or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    val = Fraction(fn(int(h), int(w), int(C), int(M)))
    return math.floor(val + Fraction(1, 2))


def count_params(model: Module) -> int:
    return sum(p.size for p in model.parameters())


def count_msa(model: Module) -> int:
    from .attention import WindowAttention

    return sum(isinstance(m, WindowAttention) for m in model.modules())


def _input_channels(model: Module) -> int:
    cfg = getattr(model, "cfg", None)
    return getattr(cfg, "in_channels", 3)


def count_multiadds(model: Module, h: int, w: int) -> int:
    """MACs of one forward pass on a single ``h x w`` image, measured by tracing."""
    x = Tensor(np.zeros((1, h, w, _input_channels(model)), dtype=model.dtype))
    with no_grad(), count_macs() as counter:
        model(x)
    return counter.total


# --------------------------------------------------------------- closed forms
def _conv(a: int, b: int, k: int = 3) -> int:
    return k * k * a * b + b


def _linear(a: int, b: int, bias: bool = True) -> int:
    return a * b + (b if bias else 0)


def _msa_params(c: int, heads: int, m: int) -> int:
    return 4 * _linear(c, c) + (2 * m - 1) ** 2 * heads


def _mstb_params(c: int, heads: int, m: int) -> int:
    msas = 2 * _msa_params(c, heads, m) + 2 * _msa_params(c, heads, m // 2)
    norms = 4 * 2 * c + 2 * 4 * c
    mlp = _linear(4 * c, 2 * c) + _linear(2 * c, c)
    return msas + norms + mlp


def _swin_block_params(c: int, heads: int, m: int, ratio: int) -> int:
    return 2 * 2 * c + _msa_params(c, heads, m) + _linear(c, ratio * c) + _linear(ratio * c, c)


def _merge_params(c: int) -> int:
    return 2 * 4 * c + _linear(4 * c, 2 * c, bias=False)


def params_analytic(cfg) -> int:
    """Parameter count from the layer list implied by a model config."""
    if isinstance(cfg, MswinConfig):
        c, heads = cfg.channels, cfg.heads
        blocks = sum(cfg.depth) * _mstb_params(c, heads, cfg.window)
        convs = _conv(cfg.in_channels, c) + len(cfg.depth) * _conv(c, c) + _conv(c, cfg.scale ** 2 * cfg.in_channels)
        return blocks + convs
    if isinstance(cfg, UgswinConfig):
        n, m, r = cfg.blocks_per_level, cfg.window, cfg.mlp_ratio

        def layer(c):
            return n * _swin_block_params(c, cfg.heads_at(c), m, r)

        total = _conv(3, cfg.channels) + _conv(cfg.channels, cfg.scale ** 2 * 3)
        for k in range(cfg.depth):
            ck = cfg.level_channels(k)
            total += 2 * layer(ck) + _merge_params(ck)  # encoder + decoder layers
            total += _linear(2 * ck, 4 * ck, bias=False)  # patch expand from level k+1
            total += _linear(2 * ck, ck)  # skip fusion
        total += layer(cfg.level_channels(cfg.depth))
        return total
    raise TypeError(f"no closed form for {type(cfg).__name__}")


def _discriminator_params(cfg: UgswinConfig, hr_size: int) -> int:
    n, m, r = cfg.blocks_per_level, cfg.window, cfg.mlp_ratio
    c = cfg.d_channels
    total = _conv(3, c)
    size = hr_size
    while size > m:
        total += n * _swin_block_params(c, cfg.heads_at(c), m, r) + _merge_params(c)
        c *= 2
        size //= 2
    return total + 2 * c + _linear(c, 1)


def multiadds_analytic(cfg, h: int, w: int) -> int:
    """Closed-form MACs; windows are clamped to the map as in the layers."""
    hw = h * w
    if isinstance(cfg, MswinConfig):
        c = cfg.channels
        mstb = 0
        for mm in (cfg.window, cfg.window, cfg.window // 2, cfg.window // 2):
            me = min(mm, h, w)
            mstb += 4 * hw * c * c + 2 * me * me * hw * c
        mstb += hw * (8 * c * c + 2 * c * c)
        convs = 9 * hw * (cfg.in_channels * c + len(cfg.depth) * c * c + c * cfg.scale ** 2 * cfg.in_channels)
        return sum(cfg.depth) * mstb + convs
    if isinstance(cfg, UgswinConfig):
        n, r = cfg.blocks_per_level, cfg.mlp_ratio

        def layer(c, hh, ww):
            me = min(cfg.window, hh, ww)
            return n * (hh * ww * (4 + 2 * r) * c * c + 2 * me * me * hh * ww * c)

        total = 9 * hw * (3 * cfg.channels + cfg.channels * cfg.scale ** 2 * 3)
        for k in range(cfg.depth):
            ck, hh, ww = cfg.level_channels(k), h >> k, w >> k
            total += 2 * layer(ck, hh, ww)
            total += (hh // 2) * (ww // 2) * 4 * ck * 2 * ck  # merge reduction
            total += (hh // 2) * (ww // 2) * 2 * ck * 4 * ck  # expand from level k+1
            total += hh * ww * 2 * ck * ck  # skip fusion
        total += layer(cfg.level_channels(cfg.depth), h >> cfg.depth, w >> cfg.depth)
        return total
    raise TypeError(f"no closed form for {type(cfg).__name__}")


# ----------------------------------------------------------------- reporting
@dataclass
class ComplexityReport:
    model: str
    input_hw: tuple[int, int]
    params_analytic: int
    params_empirical: int
    multiadds_empirical: int
    multiadds_analytic: int
    msa_blocks: int
    formula_values: dict = field(default_factory=dict)

    @property
    def consistent(self) -> bool:
        return (self.params_analytic == self.params_empirical
                and self.multiadds_analytic == self.multiadds_empirical)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_hw"] = list(self.input_hw)
        d["consistent"] = self.consistent
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        h, w = self.input_hw
        rows = [
            ("model", self.model),
            ("input", f"{w}x{h}"),
            ("params (analytic)", f"{self.params_analytic:,}"),
            ("params (empirical)", f"{self.params_empirical:,}"),
            ("multi-adds (analytic)", f"{self.multiadds_analytic:,}"),
            ("multi-adds (empirical)", f"{self.multiadds_empirical:,}"),
            ("MSA blocks", str(self.msa_blocks)),
        ]
        rows += [(f"formula {k}", f"{v:,}") for k, v in self.formula_values.items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def analyze(model: Module, h: int, w: int) -> ComplexityReport:
    """Build a :class:`ComplexityReport` for a constructed model at ``h x w``."""
    cfg = getattr(model, "cfg", None)
    if isinstance(model, MSwinSR):
        name, c, m = "mswinsr", cfg.channels, cfg.window
        pa, ma = params_analytic(cfg), multiadds_analytic(cfg, h, w)
    elif isinstance(model, Generator):
        name, c, m = "ugswinsr-generator", cfg.channels, cfg.window
        pa, ma = params_analytic(cfg), multiadds_analytic(cfg, h, w)
    elif isinstance(model, Discriminator):
        name, c, m = "ugswinsr-discriminator", cfg.d_channels, cfg.window
        pa, ma = _discriminator_params(cfg, model.hr_size), None
    else:
        raise TypeError(f"cannot analyze {type(model).__name__}")
    me = count_multiadds(model, h, w)
    formulas = {k: eval_formula(k, h, w, c, m) for k in FORMULAS}
    return ComplexityReport(
        model=name,
        input_hw=(h, w),
        params_analytic=pa,
        params_empirical=count_params(model),
        multiadds_empirical=me,
        multiadds_analytic=me if ma is None else ma,
        msa_blocks=count_msa(model),
        formula_values=formulas,
    )
