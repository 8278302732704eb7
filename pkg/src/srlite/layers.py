"""Parameter containers and the small layer set the models are built from."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, get_default_dtype

__all__ = [
    "Parameter",
    "Module",
    "ModuleList",
    "ParamStore",
    "Linear",
    "Conv2d",
    "LayerNorm",
    "PatchMerge",
    "PatchExpand",
    "trunc_normal",
]


class Parameter(Tensor):
    """A learnable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=None) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype or get_default_dtype())


class Module:
    """Base class: parameters and sub-modules are discovered from attributes
    in assignment order, which fixes parameter naming and ordering."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def named_children(self) -> Iterator[tuple[str, "Module"]]:
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, val in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(val, Parameter):
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Convert every parameter in place to ``dtype``."""
        dtype = np.dtype(dtype)
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def double(self) -> "Module":
        return self.astype(np.float64)

    def float(self) -> "Module":
        return self.astype(np.float32)

    @property
    def dtype(self) -> np.dtype:
        ps = self.parameters()
        return ps[0].dtype if ps else get_default_dtype()


class ModuleList(Module):
    def __init__(self, modules=()):
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


class ParamStore:
    """Named, ordered view over a module's learnable tensors."""

    def __init__(self, params: "OrderedDict[str, Parameter] | None" = None):
        self._params: OrderedDict[str, Parameter] = OrderedDict(params or {})

    @classmethod
    def from_module(cls, module: Module, prefix: str = "") -> "ParamStore":
        return cls(OrderedDict(module.named_parameters(prefix)))

    def merged(self, other: "ParamStore") -> "ParamStore":
        dup = set(self._params) & set(other._params)
        if dup:
            raise ValueError(f"duplicate parameter names: {sorted(dup)[:3]}")
        return ParamStore(OrderedDict(list(self._params.items()) + list(other._params.items())))

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        return sum(p.size for p in self._params.values())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data.copy()) for k, p in self._params.items())

    def load_state_dict(self, state: dict) -> None:
        missing = [k for k in self._params if k not in state]
        if missing:
            raise KeyError(f"missing parameter {missing[0]!r} in state")
        for k, p in self._params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k!r}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, rng=None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(trunc_normal(rng, (d_in, d_out), dtype=dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype or get_default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """3x3 (or 1x1) same-padding convolution with bias."""

    def __init__(self, c_in: int, c_out: int, k: int = 3, rng=None, dtype=None, zero_init: bool = False):
        if k not in (1, 3):
            raise ValueError(f"only 1x1 and 3x3 kernels are supported, got {k}")
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = dtype or get_default_dtype()
        w = np.zeros((k, k, c_in, c_out), dtype=dt) if zero_init else trunc_normal(rng, (k, k, c_in, c_out), dtype=dt)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c_out, dtype=dt))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=None):
        dt = dtype or get_default_dtype()
        self.weight = Parameter(np.ones(dim, dtype=dt))
        self.bias = Parameter(np.zeros(dim, dtype=dt))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, self.eps)


class PatchMerge(Module):
    """2x2 gather to 4C, LayerNorm over 4C, bias-free linear 4C -> 2C."""

    def __init__(self, dim: int, rng=None, dtype=None):
        self.norm = LayerNorm(4 * dim, dtype=dtype)
        self.reduction = Linear(4 * dim, 2 * dim, bias=False, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.reduction(self.norm(F.merge_gather(x)))


class PatchExpand(Module):
    """Bias-free linear C -> 2C followed by a 2x pixel shuffle to C/2 channels."""

    def __init__(self, dim: int, rng=None, dtype=None):
        if dim % 2:
            raise ValueError(f"patch expanding needs an even channel count, got {dim}")
        self.expand = Linear(dim, 2 * dim, bias=False, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] % 2:
            raise ValueError(f"patch expanding needs an even channel count, got {x.shape[-1]}")
        return F.pixel_shuffle(self.expand(x), 2)
