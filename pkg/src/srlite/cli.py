"""``srlite`` command-line entry point.

Exit status: 0 on success, 1 for usage or configuration errors, 2 for
runtime failures (missing files, bad checkpoints, numerical aborts).
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .complexity import analyze
from .config import ConfigError, RunConfig, build_discriminator, build_model, load_config, model_from_meta
from .data import DatasetSpec, build_dataset, degrade_pair, list_images, read_image, write_image
from .layers import ParamStore
from .metrics import psnr, ssim
from .train import GanTrainer, L1Trainer, checkpoint_load, checkpoint_save, load_params, predict, write_log

log = logging.getLogger("srlite")

COMMANDS = {
    "train": "train the configured model; writes train_log.csv and checkpoint.bin to the output directory",
    "sr": "upscale one image with a trained checkpoint",
    "eval": "PSNR/SSIM table over a directory holding hr/ and sr/ (or lr/ with --checkpoint)",
    "analyze": "parameter and multi-add report for the configured model",
    "degrade": "center-crop, resize and bicubic-downscale every image in a directory",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    epilog = "commands:\n" + "\n".join(f"  {k:<8} {v}" for k, v in COMMANDS.items())
    epilog += "\n\nenvironment:\n  SRLITE_THREADS  cap on BLAS threads (0 = library default)"
    p = _Parser(
        prog="srlite",
        usage="srlite <train|sr|eval|analyze|degrade> [options]",
        description="Swin-transformer super-resolution toolkit.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("command", metavar="COMMAND", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", metavar="PATH", help="JSON run config (defaults apply when omitted)")
    p.add_argument("--checkpoint", metavar="PATH",
                   help="checkpoint to read (sr, eval) or resume from (train)")
    p.add_argument("--in", dest="inp", metavar="PATH", help="input image (sr) or directory (eval, degrade)")
    p.add_argument("--out", metavar="PATH",
                   help="output image (sr), directory (train, degrade), CSV (eval) or JSON report (analyze)")
    p.add_argument("--input", metavar="WxH", default="64x64", help="LR input size for analyze (default 64x64)")
    p.add_argument("--seed", metavar="N", type=int, help="override train.seed")
    p.add_argument("--version", action="version", version=f"srlite {__version__}")
    return p


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--input expects WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise UsageError(f"--input extents must be positive, got {text!r}")
    return w, h


def _require(args, *names: str) -> None:
    missing = [n for n in names if getattr(args, "inp" if n == "in" else n) is None]
    if missing:
        raise UsageError(f"{args.command} requires " + ", ".join(f"--{n}" for n in missing))


def _config(args) -> RunConfig:
    if args.config is None:
        cfg = RunConfig()
    else:
        if not Path(args.config).is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    return cfg


@contextlib.contextmanager
def _thread_limit():
    raw = os.environ.get("SRLITE_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SRLITE_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("SRLITE_THREADS must be >= 0")
    if n == 0:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


# ----------------------------------------------------------------- commands
def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set = build_dataset(cfg.data)
    model = build_model(cfg.model_type, cfg.model, seed=cfg.train.seed)
    if cfg.model_type == "ugswinsr":
        disc = build_discriminator(cfg.model, cfg.data.hr_size, seed=cfg.train.seed)
        trainer = GanTrainer(model, disc, train_set, cfg.train, val_set)
    else:
        trainer = L1Trainer(model, train_set, cfg.train, val_set)
    resume = args.checkpoint or cfg.paths.checkpoint
    if resume:
        checkpoint_load(resume, trainer)
        log.info("resumed from %s at step %d", resume, trainer.step_count)
    log.info("training %s for %d steps", cfg.model_type, trainer.total_steps)
    history = trainer.run()
    write_log(out / "train_log.csv", history)
    if cfg.model_type == "ugswinsr":
        write_log(out / "train_log_d.csv", history, which="loss_D")
    checkpoint_save(out / "checkpoint.bin", trainer)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    final = history.loss[-1] if history.loss else float("nan")
    print(f"steps {trainer.step_count}  final loss {final:.6f}  -> {out}")
    return 0


def _load_model(path):
    tensors, meta = load_checkpoint(path)
    if "model" not in meta:
        raise CheckpointError(f"{path} does not describe a model")
    _, model = model_from_meta(meta["model"])
    prefix = "gen" if meta.get("kind") == "gan" else "model"
    load_params(ParamStore.from_module(model), tensors, prefix)
    return model


def cmd_sr(args) -> int:
    _require(args, "checkpoint", "in", "out")
    model = _load_model(args.checkpoint)
    img = read_image(args.inp)
    write_image(args.out, predict(model, img))
    h, w = img.shape[:2]
    s = model.cfg.scale
    print(f"{w}x{h} -> {s * w}x{s * h}  {args.out}")
    return 0


def _image_map(directory: Path) -> dict[str, Path]:
    return {p.stem: p for p in list_images(directory)}


def cmd_eval(args) -> int:
    _require(args, "in")
    root = Path(args.inp)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    hr = _image_map(root / "hr")
    if (root / "sr").is_dir():
        sr = {k: read_image(p) for k, p in _image_map(root / "sr").items()}
    elif (root / "lr").is_dir():
        if args.checkpoint is None:
            raise UsageError("eval over lr/ needs --checkpoint")
        model = _load_model(args.checkpoint)
        sr = {k: predict(model, read_image(p)) for k, p in _image_map(root / "lr").items()}
    else:
        raise FileNotFoundError(f"{root} has neither sr/ nor lr/")
    names = sorted(set(hr) & set(sr))
    if not names:
        raise FileNotFoundError(f"no matching image names between {root / 'hr'} and the predictions")
    rows = []
    for name in names:
        target = read_image(hr[name])
        if target.shape != sr[name].shape:
            raise ValueError(f"{name}: hr {target.shape} and sr {sr[name].shape} differ in shape")
        rows.append((name, psnr(sr[name], target), ssim(sr[name], target)))
    mean = ("mean", float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows])))
    width = max(len(r[0]) for r in rows + [mean])
    print(f"{'image':<{width}}  {'PSNR':>8}  {'SSIM':>7}")
    for name, p, s in rows + [mean]:
        print(f"{name:<{width}}  {p:8.3f}  {s:7.4f}")
    if args.out:
        lines = ["image,psnr,ssim"] + [f"{n},{p!r},{s!r}" for n, p, s in rows + [mean]]
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args)
    w, h = _parse_size(args.input)
    model = build_model(cfg.model_type, cfg.model, seed=cfg.train.seed)
    model.check_input(h, w)
    report = analyze(model, h, w)
    report.model = cfg.model_type
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_degrade(args) -> int:
    _require(args, "in", "out")
    data: DatasetSpec = _config(args).data
    out = Path(args.out)
    (out / "hr").mkdir(parents=True, exist_ok=True)
    (out / "lr").mkdir(parents=True, exist_ok=True)
    names = []
    for path in list_images(args.inp):
        pair = degrade_pair(read_image(path), data.hr_size, data.scale, name=path.stem)
        write_image(out / "hr" / f"{path.stem}.ppm", pair.hr)
        write_image(out / "lr" / f"{path.stem}.ppm", pair.lr)
        names.append(f"{path.stem}.ppm")
    (out / "manifest.txt").write_text("".join(n + "\n" for n in names), encoding="utf-8")
    print(f"{len(names)} pairs ({data.hr_size}px hr, x{data.scale}) -> {out}")
    return 0


HANDLERS = {"train": cmd_train, "sr": cmd_sr, "eval": cmd_eval, "analyze": cmd_analyze, "degrade": cmd_degrade}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command not in HANDLERS:
            raise UsageError(f"unknown subcommand {args.command!r} (expected one of: {', '.join(HANDLERS)})")
        with _thread_limit():
            return HANDLERS[args.command](args)
    except UsageError as e:
        print(f"srlite: usage error: {e}", file=sys.stderr)
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"srlite: config error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"srlite: missing file: {e}", file=sys.stderr)
        return 2
    except CheckpointError as e:
        print(f"srlite: checkpoint error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError, RuntimeError, OSError) as e:
        print(f"srlite: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
