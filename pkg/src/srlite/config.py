"""JSON run configuration.

A run config is one JSON object with four optional sections::

    {
      "model": {"type": "mswinsr", "channels": 60, "depth": [2, 2, 2], "window": 8, "scale": 4},
      "train": {"epochs": 100, "batch_size": 20, "seed": 0, "lr": 0.0002},
      "data":  {"source": "synthetic", "hr_size": 256, "n_train": 16, "n_val": 4},
      "paths": {"out_dir": "runs/default", "checkpoint": null}
    }

``model.type`` is one of ``mswinsr``, ``uswinsr`` (U-Net generator, L1 loss)
or ``ugswinsr`` (U-Net generator plus discriminator, adversarial loss).  The
remaining model keys are the fields of :class:`MswinConfig` or
:class:`UgswinConfig`.  ``train`` holds :class:`TrainConfig` fields, ``data``
holds :class:`DatasetSpec` fields, and every omitted key takes its default.

Unknown keys, duplicate keys and wrongly typed values are rejected, and every
error message names the offending key path (``model.depth[1]``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Any

from .data import DatasetSpec
from .mswinsr import MSwinSR, MswinConfig, check_mswin_input
from .train import TrainConfig
from .ugswinsr import Discriminator, Generator, UgswinConfig, check_discriminator_size, check_generator_input

__all__ = [
    "ConfigError",
    "PathsConfig",
    "RunConfig",
    "MODEL_TYPES",
    "parse_config",
    "load_config",
    "build_model",
    "build_discriminator",
    "model_from_meta",
]

MODEL_TYPES = ("mswinsr", "uswinsr", "ugswinsr")


class ConfigError(ValueError):
    """Invalid configuration; the message names the key path."""


@dataclass
class PathsConfig:
    out_dir: str = "runs/default"
    checkpoint: str | None = None


@dataclass
class RunConfig:
    model_type: str = "mswinsr"
    model: MswinConfig | UgswinConfig = field(default_factory=MswinConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return {
            "model": {"type": self.model_type, **self.model.to_dict()},
            "train": self.train.to_dict(),
            "data": self.data.to_dict(),
            "paths": {"out_dir": self.paths.out_dir, "checkpoint": self.paths.checkpoint},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


# ------------------------------------------------------------------ typing
_INT, _FLOAT, _STR, _BOOL = "int", "float", "str", "bool"

_SCHEMA: dict[str, dict[str, tuple]] = {
    "mswinsr": {
        "channels": (_INT,), "depth": ("int_list",), "window": (_INT,), "scale": (_INT,),
        "in_channels": (_INT,), "num_heads": (_INT, None),
    },
    "ugswinsr": {
        "channels": (_INT,), "depth": (_INT,), "window": (_INT,), "scale": (_INT,),
        "blocks_per_level": (_INT,), "num_heads": (_INT, None), "mlp_ratio": (_INT,),
        "disc_channels": (_INT, None),
    },
    "train": {
        "epochs": (_INT,), "batch_size": (_INT,), "seed": (_INT,), "regime": (_STR,), "lr": (_FLOAT,),
        "beta1": (_FLOAT,), "beta2": (_FLOAT,), "eps": (_FLOAT,), "eval_every": (_INT,),
        "max_steps": (_INT, None), "lambda_pixel": (_FLOAT,), "lambda_adv": (_FLOAT,),
    },
    "data": {
        "source": (_STR,), "hr_size": (_INT,), "scale": (_INT,), "n_train": (_INT,), "n_val": (_INT,),
        "seed": (_INT,), "crop": (_STR,),
    },
    "paths": {"out_dir": (_STR,), "checkpoint": (_STR, None)},
}
_SCHEMA["uswinsr"] = _SCHEMA["ugswinsr"]


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check_type(path: str, value, allowed: tuple):
    if value is None:
        if None in allowed:
            return None
        raise ConfigError(f"{path}: null is not allowed")
    kind = allowed[0]
    if kind == _INT and _is_int(value):
        return value
    if kind == _FLOAT and (_is_int(value) or isinstance(value, float)):
        return float(value)
    if kind == _STR and isinstance(value, str):
        return value
    if kind == "int_list" and isinstance(value, list):
        for i, v in enumerate(value):
            if not _is_int(v):
                raise ConfigError(f"{path}[{i}]: expected an integer, got {json.dumps(v)}")
        return list(value)
    expected = {"int_list": "a list of integers", _INT: "an integer", _FLOAT: "a number", _STR: "a string"}[kind]
    raise ConfigError(f"{path}: expected {expected}, got {json.dumps(value)}")


def _section(doc: dict, name: str, schema: dict, skip=()) -> dict:
    raw = doc.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    out = {}
    for key, value in raw.items():
        if key in skip:
            continue
        if key not in schema:
            known = ", ".join(sorted(schema))
            raise ConfigError(f"{name}.{key}: unknown key (known keys: {known})")
        out[key] = _check_type(f"{name}.{key}", value, schema[key])
    return out


def _build(cls, section: str, values: dict):
    try:
        return cls(**values)
    except ValueError as e:
        msg = str(e)
        key = next((f.name for f in fields(cls) if f.name in msg), None)
        where = f"{section}.{key}" if key else section
        raise ConfigError(f"{where}: {msg}") from None


def _no_duplicates(pairs: list[tuple[str, Any]]) -> dict:
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}")
        out[k] = v
    return out


# ----------------------------------------------------------------- parsing
def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run config."""
    try:
        doc = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON syntax error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object")
    for key in doc:
        if key not in ("model", "train", "data", "paths"):
            raise ConfigError(f"{key}: unknown section (known: data, model, paths, train)")

    model_doc = doc.get("model", {})
    if not isinstance(model_doc, dict):
        raise ConfigError("model: expected an object")
    mtype = model_doc.get("type", "mswinsr")
    if mtype not in MODEL_TYPES:
        raise ConfigError(f"model.type: expected one of {', '.join(MODEL_TYPES)}, got {json.dumps(mtype)}")
    model_vals = _section(doc, "model", _SCHEMA[mtype], skip=("type",))
    model = _build(MswinConfig if mtype == "mswinsr" else UgswinConfig, "model", model_vals)

    train_vals = _section(doc, "train", _SCHEMA["train"])
    regime = "gan" if mtype == "ugswinsr" else "l1"
    if train_vals.setdefault("regime", regime) != regime:
        raise ConfigError(f"train.regime: model.type {mtype} trains with regime {regime!r}, "
                          f"got {train_vals['regime']!r}")
    train = _build(TrainConfig, "train", train_vals)

    data_vals = _section(doc, "data", _SCHEMA["data"])
    if data_vals.setdefault("scale", model.scale) != model.scale:
        raise ConfigError(f"data.scale: {data_vals['scale']} differs from model.scale {model.scale}")
    data = _build(DatasetSpec, "data", data_vals)
    try:
        data.validate()
    except ValueError as e:
        key = next((f.name for f in fields(DatasetSpec) if f.name in str(e)), None)
        raise ConfigError(f"data.{key}: {e}" if key else f"data: {e}") from None
    _check_geometry(mtype, model, data)

    paths = PathsConfig(**_section(doc, "paths", _SCHEMA["paths"]))
    return RunConfig(mtype, model, train, data, paths)


def _check_geometry(mtype: str, model, data: DatasetSpec) -> None:
    lr = data.hr_size // data.scale
    try:
        if mtype == "mswinsr":
            check_mswin_input(model, lr, lr)
        else:
            check_generator_input(model, lr, lr)
            if mtype == "ugswinsr":
                check_discriminator_size(model, data.hr_size)
    except ValueError as e:
        raise ConfigError(f"data.hr_size: {e}") from None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text)


# ---------------------------------------------------------------- factory
def build_model(mtype: str, cfg, seed: int = 0, dtype=None):
    """Construct the trainable network for a model type (the generator for the U-Net types)."""
    if mtype == "mswinsr":
        return MSwinSR(cfg, seed=seed, dtype=dtype)
    if mtype in ("uswinsr", "ugswinsr"):
        return Generator(cfg, seed=seed, dtype=dtype)
    raise ConfigError(f"model.type: unknown model type {mtype!r}")


def build_discriminator(cfg: UgswinConfig, hr_size: int, seed: int = 0, dtype=None) -> Discriminator:
    return Discriminator(cfg, hr_size=hr_size, seed=seed, dtype=dtype)


def model_from_meta(meta: dict):
    """``(type, model)`` rebuilt from a checkpoint's ``model`` metadata."""
    info = dict(meta)
    mtype = info.pop("type", None)
    if mtype == "mswinsr":
        cfg = MswinConfig(**info)
    elif mtype in ("uswinsr", "ugswinsr"):
        cfg = UgswinConfig(**info)
    else:
        raise ValueError(f"checkpoint describes unknown model type {mtype!r}")
    return mtype, build_model(mtype, cfg)
