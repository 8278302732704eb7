"""Image I/O, the HR/LR degradation pipeline and a synthetic paired dataset.

Images are float arrays ``(H, W, C)`` in [0, 1].  The degradation is:
center-crop to a square, bicubic resize to the HR size, bicubic shrink by the
scale factor to get the LR image.
"""

from __future__ import annotations

import os
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .resize import resize_array
from .rng import stream

__all__ = [
    "PairedSample",
    "DatasetSpec",
    "read_ppm",
    "write_ppm",
    "read_image",
    "write_image",
    "to_uint8",
    "from_uint8",
    "center_crop",
    "degrade_pair",
    "render_synthetic",
    "synth_dataset",
    "list_images",
    "read_manifest",
    "build_dataset",
    "stack_batch",
]

IMAGE_SUFFIXES = (".ppm", ".png")


@dataclass
class PairedSample:
    lr: np.ndarray
    hr: np.ndarray
    name: str = ""

    def __post_init__(self):
        lh, lw = self.lr.shape[:2]
        hh, hw = self.hr.shape[:2]
        if hh % lh or hw % lw or hh // lh != hw // lw:
            raise ValueError(f"HR {hh}x{hw} is not an integer multiple of LR {lh}x{lw}")

    @property
    def scale(self) -> int:
        return self.hr.shape[0] // self.lr.shape[0]


# ---------------------------------------------------------------------- I/O
_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pnm_header(buf: bytes) -> tuple[bytes, int, int, int, int]:
    pos = 0
    toks = []
    for _ in range(4):
        m = _PNM_TOKEN.match(buf, pos)
        if not m:
            raise ValueError("truncated PPM header")
        toks.append(m.group(1))
        pos = m.end()
    if pos >= len(buf) or buf[pos:pos + 1] not in b" \t\r\n":
        raise ValueError("malformed PPM header")
    magic, w, h, maxval = toks[0], int(toks[1]), int(toks[2]), int(toks[3])
    return magic, w, h, maxval, pos + 1


def read_ppm(path) -> np.ndarray:
    """Read binary PPM (P6) or PGM (P5) with maxval 255 as uint8 ``(H, W, C)``."""
    buf = Path(path).read_bytes()
    magic, w, h, maxval, off = _pnm_header(buf)
    if magic not in (b"P6", b"P5"):
        raise ValueError(f"{path}: unsupported PNM type {magic!r}; expected binary P6")
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM (maxval 255) is supported, got {maxval}")
    c = 3 if magic == b"P6" else 1
    n = w * h * c
    if len(buf) - off < n:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=off).reshape(h, w, c).copy()


def write_ppm(path, img: np.ndarray) -> None:
    """Write a uint8 ``(H, W, 3)`` (or single-channel) image as binary PPM/PGM."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    magic = {3: b"P6", 1: b"P5"}.get(c)
    if magic is None:
        raise ValueError(f"cannot write {c}-channel image as PPM")
    header = magic + b"\n%d %d\n255\n" % (w, h)
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def read_image(path) -> np.ndarray:
    """Read a PPM or PNG file as a float64 RGB image in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as e:  # pragma: no cover - depends on environment
            raise RuntimeError("PNG input needs Pillow (pip install Pillow)") from e
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    else:
        arr = read_ppm(path)
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return from_uint8(arr)


def write_image(path, img: np.ndarray) -> None:
    write_ppm(path, to_uint8(img))


# -------------------------------------------------------------- degradation
def center_crop(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    return img[top:top + side, left:left + side]


def degrade_pair(img: np.ndarray, hr_size: int = 256, scale: int = 4, name: str = "") -> PairedSample:
    """Center-crop, bicubic to ``hr_size``, bicubic down by ``scale``; values clipped to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"image {img.shape[0]}x{img.shape[1]} is smaller than 2x2")
    if hr_size % scale:
        raise ValueError(f"hr_size {hr_size} is not divisible by scale {scale}")
    hr = resize_array(center_crop(img), hr_size, hr_size)
    lr = resize_array(hr, hr_size // scale, hr_size // scale)
    hr = np.clip(hr, 0.0, 1.0).astype(np.float32)
    lr = np.clip(lr, 0.0, 1.0).astype(np.float32)
    return PairedSample(lr=lr, hr=hr, name=name)


# ----------------------------------------------------------------- synthetic
def render_synthetic(rng: np.random.Generator, size: int) -> np.ndarray:
    """A smooth colour gradient overlaid with soft ellipses and thin strokes."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    c0, cx, cy = rng.uniform(0.2, 0.8, 3), rng.uniform(-0.3, 0.3, 3), rng.uniform(-0.3, 0.3, 3)
    img = c0 + cx * xx[..., None] + cy * yy[..., None]
    px = 1.0 / size
    for _ in range(rng.integers(1, 4)):
        cxy = rng.uniform(0.15, 0.85, 2)
        rad = rng.uniform(0.08, 0.3, 2)
        ang = rng.uniform(0, np.pi)
        ca, sa = np.cos(ang), np.sin(ang)
        dx, dy = xx - cxy[0], yy - cxy[1]
        u, v = (ca * dx + sa * dy) / rad[0], (-sa * dx + ca * dy) / rad[1]
        r = np.sqrt(u * u + v * v)
        cover = np.clip((1.0 - r) * min(rad) / px + 0.5, 0.0, 1.0)[..., None]
        img = img * (1 - cover) + rng.uniform(0, 1, 3) * cover
    for _ in range(rng.integers(2, 6)):
        p0, p1 = rng.uniform(0.1, 0.9, 2), rng.uniform(0.1, 0.9, 2)
        half = rng.uniform(0.6, 1.6) * px
        d = p1 - p0
        t = np.clip(((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / max(float(d @ d), 1e-12), 0, 1)
        dist = np.hypot(xx - (p0[0] + t * d[0]), yy - (p0[1] + t * d[1]))
        cover = np.clip((half - dist) / px + 0.5, 0.0, 1.0)[..., None]
        img = img * (1 - cover) + rng.uniform(0, 1, 3) * cover
    return np.clip(img, 0.0, 1.0)


def synth_dataset(seed: int, n: int, hr_size: int = 256, scale: int = 4) -> list[PairedSample]:
    """``n`` synthetic pairs; sample ``i`` depends only on ``(seed, i)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        img = render_synthetic(stream(seed, "synth", i), hr_size)
        out.append(degrade_pair(img, hr_size, scale, name=f"synth_{i:05d}"))
    return out


# ------------------------------------------------------------- directories
@dataclass
class DatasetSpec:
    source: str = "synthetic"
    hr_size: int = 256
    scale: int = 4
    n_train: int = 16
    n_val: int = 4
    seed: int = 0
    crop: str = "center"

    def validate(self) -> None:
        if self.crop != "center":
            raise ValueError(f"crop must be 'center', got {self.crop!r}")
        if self.hr_size < 2 or self.hr_size % self.scale:
            raise ValueError(f"hr_size {self.hr_size} must be >= 2 and divisible by scale {self.scale}")
        if self.n_train < 1 or self.n_val < 0:
            raise ValueError("n_train must be >= 1 and n_val >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def read_manifest(path) -> list[str]:
    """One relative image path per line (UTF-8); blank lines and ``#`` comments skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    manifest = directory / "manifest.txt"
    if manifest.exists():
        return [directory / rel for rel in read_manifest(manifest)]
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def build_dataset(spec: DatasetSpec) -> tuple[list[PairedSample], list[PairedSample]]:
    """Disjoint train/validation splits, deterministic for a fixed seed."""
    spec.validate()
    if spec.source == "synthetic":
        pairs = synth_dataset(spec.seed, spec.n_train + spec.n_val, spec.hr_size, spec.scale)
        return pairs[:spec.n_train], pairs[spec.n_train:]
    paths = list_images(spec.source)
    need = spec.n_train + spec.n_val
    if len(paths) < need:
        raise ValueError(f"{spec.source} holds {len(paths)} images, need {need}")
    order = stream(spec.seed, "split").permutation(len(paths))[:need]
    pairs = [degrade_pair(read_image(paths[i]), spec.hr_size, spec.scale, name=os.path.basename(paths[i]))
             for i in order]
    return pairs[:spec.n_train], pairs[spec.n_train:]


def stack_batch(samples: list[PairedSample], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    lr = np.stack([s.lr for s in samples]).astype(dtype, copy=False)
    hr = np.stack([s.hr for s in samples]).astype(dtype, copy=False)
    return lr, hr
