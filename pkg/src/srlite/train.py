"""Adam, the L1 and adversarial training loops, and trainer checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .checkpoint import MissingParameterError, load_checkpoint, require, save_checkpoint
from .data import PairedSample, stack_batch
from .layers import Module, ParamStore
from .metrics import psnr
from .mswinsr import MSwinSR
from .rng import stream
from .tensor import Tensor, no_grad
from .ugswinsr import Discriminator, GanLossConfig, Generator, gan_losses

log = logging.getLogger(__name__)

__all__ = [
    "Adam",
    "TrainConfig",
    "TrainHistory",
    "L1Trainer",
    "GanTrainer",
    "train_l1",
    "train_gan",
    "discriminator_accuracy",
    "checkpoint_save",
    "checkpoint_load",
    "predict",
    "load_params",
    "write_log",
]


class Adam:
    """Bias-corrected Adam without weight decay."""

    def __init__(self, params: ParamStore, lr: float = 2e-4, betas=(0.5, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params}
        self.v = {k: np.zeros_like(p.data) for k, p in params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / c1
            vhat = v / c2
            p.data = p.data - (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)

    def state(self, prefix: str) -> tuple[dict, dict]:
        tensors = {}
        for k in self.m:
            tensors[f"{prefix}/m/{k}"] = self.m[k]
            tensors[f"{prefix}/v/{k}"] = self.v[k]
        meta = {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}
        return tensors, meta

    def load_state(self, prefix: str, tensors: dict, meta: dict) -> None:
        self.t = int(meta["t"])
        self.lr, self.beta1, self.beta2, self.eps = meta["lr"], meta["beta1"], meta["beta2"], meta["eps"]
        for k in self.m:
            self.m[k] = require(tensors, f"{prefix}/m/{k}").copy()
            self.v[k] = require(tensors, f"{prefix}/v/{k}").copy()


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 20
    seed: int = 0
    regime: str = "l1"
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 1
    max_steps: int | None = None
    lambda_pixel: float = 1.0
    lambda_adv: float = 1e-3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.regime not in ("l1", "gan"):
            raise ValueError(f"regime must be 'l1' or 'gan', got {self.regime!r}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        GanLossConfig(self.lambda_pixel, self.lambda_adv)

    @property
    def loss_weights(self) -> GanLossConfig:
        return GanLossConfig(self.lambda_pixel, self.lambda_adv)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    steps: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    loss_D: list[float] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    epoch_loss_D: list[float] = field(default_factory=list)
    val_psnr: list[tuple[int, float]] = field(default_factory=list)

    @property
    def loss_G(self) -> list[float]:
        return self.loss

    def csv_lines(self, which: str = "loss") -> list[str]:
        vals = self.loss if which == "loss" else self.loss_D
        psnr_at = dict(self.val_psnr) if which == "loss" else {}
        lines = []
        for s, v in zip(self.steps, vals):
            line = f"{s},{v!r}"
            if s in psnr_at:
                line += f",{psnr_at[s]!r}"
            lines.append(line)
        return lines


def _to_tensor(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.ascontiguousarray(arr, dtype=dtype))


def predict(model: Module, lr: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Run a model in inference mode and clip the emitted images to [0, 1]."""
    lr = np.asarray(lr)
    squeeze = lr.ndim == 3
    if squeeze:
        lr = lr[None]
    outs = []
    with no_grad():
        for i in range(0, len(lr), batch_size):
            outs.append(model(_to_tensor(lr[i:i + batch_size], model.dtype)).data)
    out = np.clip(np.concatenate(outs), 0.0, 1.0)
    return out[0] if squeeze else out


class _Loop:
    """Shared epoch/batch bookkeeping; order is reshuffled at each epoch start."""

    def __init__(self, train_set: list[PairedSample], cfg: TrainConfig, val_set=None):
        if not train_set:
            raise ValueError("training set is empty")
        self.train_set = train_set
        self.val_set = val_set or []
        self.cfg = cfg
        self.rng = stream(cfg.seed, "shuffle")
        self.step_count = 0
        self.epoch = 0
        self.cursor = 0
        self.order = self.rng.permutation(len(train_set))
        self.history = TrainHistory()
        self._epoch_acc: list[float] = []
        self._epoch_acc_d: list[float] = []

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.train_set) / self.cfg.batch_size)

    @property
    def total_steps(self) -> int:
        if self.cfg.max_steps is not None:
            return self.cfg.max_steps
        return self.cfg.epochs * self.steps_per_epoch

    def _next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.order[self.cursor:self.cursor + self.cfg.batch_size]
        self.cursor += len(idx)
        return stack_batch([self.train_set[i] for i in idx])

    def _end_step(self, loss: float, loss_d: float | None = None) -> None:
        if not math.isfinite(loss) or (loss_d is not None and not math.isfinite(loss_d)):
            raise FloatingPointError(f"non-finite loss at step {self.step_count}")
        self.step_count += 1
        self.history.steps.append(self.step_count)
        self.history.loss.append(loss)
        self._epoch_acc.append(loss)
        if loss_d is not None:
            self.history.loss_D.append(loss_d)
            self._epoch_acc_d.append(loss_d)
        if self.cursor >= len(self.train_set):
            self.history.epoch_loss.append(float(np.mean(self._epoch_acc)))
            if self._epoch_acc_d:
                self.history.epoch_loss_D.append(float(np.mean(self._epoch_acc_d)))
            self._epoch_acc, self._epoch_acc_d = [], []
            self.epoch += 1
            self.cursor = 0
            self.order = self.rng.permutation(len(self.train_set))
            if self.val_set and self.cfg.eval_every and self.epoch % self.cfg.eval_every == 0:
                self.history.val_psnr.append((self.step_count, self.validate()))

    def validate(self) -> float:
        lr, hr = stack_batch(self.val_set)
        pred = predict(self.eval_model, lr)
        return float(np.mean([psnr(p, h) for p, h in zip(pred, hr)]))

    def run(self, steps: int | None = None) -> TrainHistory:
        end = self.total_steps if steps is None else self.step_count + steps
        while self.step_count < end:
            self.step()
        return self.history

    # -- checkpointing
    def _loop_state(self) -> tuple[dict, dict]:
        tensors = {"trainer/order": self.order.astype(np.int64)}
        meta = {
            "step": self.step_count,
            "epoch": self.epoch,
            "cursor": self.cursor,
            "rng": self.rng.bit_generator.state,
            "train": self.cfg.to_dict(),
            "history": asdict(self.history),
            "epoch_acc": self._epoch_acc,
            "epoch_acc_d": self._epoch_acc_d,
        }
        return tensors, meta

    def _load_loop_state(self, tensors: dict, meta: dict) -> None:
        self.step_count = int(meta["step"])
        self.epoch = int(meta["epoch"])
        self.cursor = int(meta["cursor"])
        self.rng.bit_generator.state = meta["rng"]
        self.order = require(tensors, "trainer/order").astype(np.int64)
        h = meta["history"]
        self.history = TrainHistory(
            steps=list(h["steps"]), loss=list(h["loss"]), loss_D=list(h["loss_D"]),
            epoch_loss=list(h["epoch_loss"]), epoch_loss_D=list(h["epoch_loss_D"]),
            val_psnr=[tuple(x) for x in h["val_psnr"]],
        )
        self._epoch_acc = list(meta["epoch_acc"])
        self._epoch_acc_d = list(meta["epoch_acc_d"])


def _model_meta(model: Module, regime: str = "gan") -> dict:
    if isinstance(model, MSwinSR):
        return {"type": "mswinsr", **model.cfg.to_dict()}
    if isinstance(model, Generator):
        return {"type": "uswinsr" if regime == "l1" else "ugswinsr", **model.cfg.to_dict()}
    raise TypeError(f"cannot describe {type(model).__name__}")


def load_params(store: ParamStore, tensors: dict, prefix: str) -> None:
    state = {}
    for name in store.names():
        key = f"{prefix}/{name}"
        if key not in tensors:
            raise MissingParameterError(f"checkpoint is missing parameter {key!r}")
        state[name] = tensors[key]
    store.load_state_dict(state)


class L1Trainer(_Loop):
    """Pixel-loss training of MSwinSR or the U-Net generator (USwinSR)."""

    def __init__(self, model: Module, train_set, cfg: TrainConfig, val_set=None):
        super().__init__(train_set, cfg, val_set)
        self.model = model
        self.params = ParamStore.from_module(model)
        self.opt = Adam(self.params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)

    @property
    def eval_model(self) -> Module:
        return self.model

    def step(self) -> float:
        lr, hr = self._next_batch()
        dt = self.model.dtype
        pred = self.model(_to_tensor(lr, dt))
        loss = F.l1_loss(pred, _to_tensor(hr, dt))
        value = loss.item()
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {self.step_count}")
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        self._end_step(value)
        return value

    def state(self) -> tuple[dict, dict]:
        tensors, meta = self._loop_state()
        for k, p in self.params:
            tensors[f"model/{k}"] = p.data
        t_opt, m_opt = self.opt.state("adam")
        tensors.update(t_opt)
        meta.update(kind="l1", model=_model_meta(self.model, "l1"), adam=m_opt)
        return tensors, meta

    def load_state(self, tensors: dict, meta: dict) -> None:
        load_params(self.params, tensors, "model")
        self.opt.load_state("adam", tensors, meta["adam"])
        self._load_loop_state(tensors, meta)


class GanTrainer(_Loop):
    """Alternating discriminator/generator updates, one of each per batch."""

    def __init__(self, gen: Generator, disc: Discriminator, train_set, cfg: TrainConfig, val_set=None,
                 update_generator: bool = True, update_discriminator: bool = True):
        super().__init__(train_set, cfg, val_set)
        self.gen, self.disc = gen, disc
        self.weights = cfg.loss_weights
        self.update_generator = update_generator
        self.update_discriminator = update_discriminator
        self.g_params = ParamStore.from_module(gen)
        self.d_params = ParamStore.from_module(disc)
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = Adam(self.g_params, cfg.lr, betas, cfg.eps)
        self.opt_d = Adam(self.d_params, cfg.lr, betas, cfg.eps)

    @property
    def eval_model(self) -> Module:
        return self.gen

    def d_step(self, lr: np.ndarray, hr: np.ndarray) -> float:
        dt = self.gen.dtype
        with no_grad():
            fake = self.gen(_to_tensor(lr, dt)).data
        d_real = self.disc(_to_tensor(hr, dt))
        d_fake = self.disc(Tensor(fake))
        loss_d = F.bce_with_logits(d_real, 1.0) + F.bce_with_logits(d_fake, 0.0)
        value = loss_d.item()
        if self.update_discriminator:
            self.opt_d.zero_grad()
            loss_d.backward()
            self.opt_d.step()
        return value

    def g_step(self, lr: np.ndarray, hr: np.ndarray) -> float:
        dt = self.gen.dtype
        pred = self.gen(_to_tensor(lr, dt))
        d_fake = self.disc(pred) if self.weights.lambda_adv else None
        loss_g = gan_losses(None, d_fake, pred, _to_tensor(hr, dt), self.weights)["loss_G"]
        value = loss_g.item()
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {self.step_count}")
        if self.update_generator:
            self.opt_g.zero_grad()
            loss_g.backward()
            self.opt_g.step()
            self.opt_d.zero_grad()
        return value

    def step(self) -> tuple[float, float]:
        lr, hr = self._next_batch()
        loss_d = self.d_step(lr, hr)
        loss_g = self.g_step(lr, hr) if self.update_generator else self._g_loss_only(lr, hr)
        self._end_step(loss_g, loss_d)
        return loss_g, loss_d

    def _g_loss_only(self, lr, hr) -> float:
        dt = self.gen.dtype
        with no_grad():
            pred = self.gen(_to_tensor(lr, dt))
            d_fake = self.disc(pred) if self.weights.lambda_adv else None
            return gan_losses(None, d_fake, pred, _to_tensor(hr, dt), self.weights)["loss_G"].item()

    def state(self) -> tuple[dict, dict]:
        tensors, meta = self._loop_state()
        for k, p in self.g_params:
            tensors[f"gen/{k}"] = p.data
        for k, p in self.d_params:
            tensors[f"disc/{k}"] = p.data
        tg, mg = self.opt_g.state("adam_g")
        td, md = self.opt_d.state("adam_d")
        tensors.update(tg)
        tensors.update(td)
        meta.update(kind="gan", model=_model_meta(self.gen), hr_size=self.disc.hr_size,
                    disc=self.disc.cfg.to_dict(), adam_g=mg, adam_d=md)
        return tensors, meta

    def load_state(self, tensors: dict, meta: dict) -> None:
        load_params(self.g_params, tensors, "gen")
        load_params(self.d_params, tensors, "disc")
        self.opt_g.load_state("adam_g", tensors, meta["adam_g"])
        self.opt_d.load_state("adam_d", tensors, meta["adam_d"])
        self._load_loop_state(tensors, meta)


def discriminator_accuracy(disc: Discriminator, gen: Generator, lr: np.ndarray, hr: np.ndarray) -> float:
    """Fraction of real images scored > 0 and generated images scored < 0."""
    dt = gen.dtype
    with no_grad():
        fake = gen(_to_tensor(lr, dt))
        real_logits = disc(_to_tensor(hr, dt)).data
        fake_logits = disc(fake).data
    hits = np.sum(real_logits > 0) + np.sum(fake_logits < 0)
    return float(hits) / (len(real_logits) + len(fake_logits))


def train_l1(model: Module, dataset: list[PairedSample], cfg: TrainConfig, val_set=None) -> TrainHistory:
    """Train with the L1 pixel loss; returns per-step and per-epoch losses."""
    return L1Trainer(model, dataset, cfg, val_set).run()


def train_gan(gen: Generator, disc: Discriminator, dataset: list[PairedSample], cfg: TrainConfig,
              val_set=None, update_generator: bool = True) -> TrainHistory:
    """Alternating adversarial training; ``history.loss_G`` / ``history.loss_D`` per step."""
    return GanTrainer(gen, disc, dataset, cfg, val_set, update_generator=update_generator).run()


def checkpoint_save(path, trainer: _Loop) -> None:
    tensors, meta = trainer.state()
    save_checkpoint(path, tensors, meta)


def checkpoint_load(path, trainer: _Loop) -> None:
    tensors, meta = load_checkpoint(path)
    expected = "gan" if isinstance(trainer, GanTrainer) else "l1"
    if meta.get("kind") != expected:
        raise ValueError(f"checkpoint holds a {meta.get('kind')!r} run, trainer expects {expected!r}")
    trainer.load_state(tensors, meta)


def write_log(path, history: TrainHistory, which: str = "loss") -> None:
    lines = ["step,loss,psnr"] + history.csv_lines(which)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
