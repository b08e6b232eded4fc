"""Synthetic paired corpus, PPM I/O, manifests, and augmentation.

The interchange format is binary PPM (P6, maxval 255): bit-exact, zero
external decoding. Degraded inputs follow
``low = clip(gain * gt^gamma + N(0, sigma^2), 0, 1)``, which spans
under-exposure plus amplified noise in a fully reproducible way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .errors import ConfigError, DataError, ParseError, ShapeError

GAMMA_RANGE = (1.0, 5.0)     # corpus sampling stays inside [2, 5]
GAIN_RANGE = (0.0, 1.0)      # corpus sampling stays inside [0.1, 0.5]
NOISE_RANGE = (0.0, 0.1)
TRAIN_FRACTION = 0.8


# ---------------------------------------------------------------------------
# PPM P6


def quantize8(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8, round-half-up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_ppm(img: np.ndarray, path):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ShapeError(f"save_ppm expects HxWx3, got {img.shape}")
    data = img if img.dtype == np.uint8 else quantize8(img)
    h, w, _ = data.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _next_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":                      # comment to end of line
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise ParseError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def load_ppm(path) -> np.ndarray:
    """Binary P6, maxval 255; returns HxWx3 floats in [0, 1] (value / 255)."""
    buf = Path(path).read_bytes()
    magic, pos = _next_token(buf, 0)
    if magic != b"P6":
        raise ParseError(f"{path}: not a P6 PPM (magic {magic!r} at byte 0)")
    fields = []
    for _ in range(3):
        tok, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise ParseError(f"{path}: bad header token {tok!r} at byte {pos - len(tok)}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval} (only 255)")
    pos += 1                               # single whitespace after maxval
    need = w * h * 3
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise ParseError(f"{path}: truncated payload at byte {pos + len(payload)} "
                         f"(need {need} bytes)")
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return raw.astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# synthesis


def synth_pair(gt: np.ndarray, gamma: float, gain: float, noise_sigma: float,
               seed: int) -> np.ndarray:
    """Degrade a ground-truth image into a deterministic low-light input."""
    gt = np.asarray(gt, dtype=np.float64)
    if not GAMMA_RANGE[0] <= gamma <= GAMMA_RANGE[1]:
        raise ConfigError(f"gamma {gamma} outside {GAMMA_RANGE}")
    if not GAIN_RANGE[0] < gain <= GAIN_RANGE[1]:
        raise ConfigError(f"gain {gain} outside {GAIN_RANGE}")
    if not NOISE_RANGE[0] <= noise_sigma <= NOISE_RANGE[1]:
        raise ConfigError(f"noise_sigma {noise_sigma} outside {NOISE_RANGE}")
    rng = np.random.default_rng(seed)
    low = gain * np.power(gt, gamma)
    if noise_sigma > 0:
        low = low + rng.normal(0.0, noise_sigma, size=gt.shape)
    return np.clip(low, 0.0, 1.0)


def _procedural_gt(size: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded ground-truth generator: colored gradient base, random shapes,
    a sinusoid texture."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy + 1.0) / 2.0
    c0 = rng.uniform(0.2, 0.9, size=3)
    c1 = rng.uniform(0.2, 0.9, size=3)
    img = ramp[..., None] * c0 + (1 - ramp[..., None]) * c1
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0.1, 1.0, size=3)
        if rng.random() < 0.5:
            x0, y0 = rng.integers(0, size, 2)
            wd, ht = rng.integers(size // 8, size // 2, 2)
            img[y0:y0 + ht, x0:x0 + wd] = color
        else:
            cx, cy = rng.uniform(0, size, 2)
            r = rng.uniform(size / 10, size / 3)
            mask = (xx * (size - 1) - cx) ** 2 + (yy * (size - 1) - cy) ** 2 < r * r
            img[mask] = color
    freq = rng.uniform(1, 4)
    phase = rng.uniform(0, 2 * np.pi)
    img += 0.08 * np.sin(2 * np.pi * freq * xx + phase)[..., None]
    return np.clip(img, 0.0, 1.0)


@dataclass
class DatasetManifest:
    root: Path
    entries: List[Tuple[str, str, str]]    # (low path, gt path, split)
    seed: int = 0

    def pairs(self, split: str | None = None):
        out = []
        for low, gt, sp in self.entries:
            if split is None or sp == split:
                out.append((self.root / low, self.root / gt))
        return out

    def split_sizes(self):
        train = sum(1 for e in self.entries if e[2] == "train")
        return train, len(self.entries) - train


MANIFEST_NAME = "manifest.tsv"


def write_manifest(manifest: DatasetManifest, path=None):
    path = Path(path) if path else manifest.root / MANIFEST_NAME
    with open(path, "w", encoding="ascii") as f:
        for low, gt, split in manifest.entries:
            f.write(f"{low}\t{gt}\t{split}\n")


def read_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    entries = []
    missing = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{path}:{lineno}: expected low<TAB>gt<TAB>split")
        low, gt, split = parts
        if split not in ("train", "val"):
            raise ParseError(f"{path}:{lineno}: unknown split {split!r}")
        if check_files:
            for p in (low, gt):
                if not (root / p).exists():
                    missing.append(str(root / p))
        entries.append((low, gt, split))
    if missing:
        raise DataError("missing dataset files: " + ", ".join(missing))
    return DatasetManifest(root=root, entries=entries)


def generate_corpus(n: int, size: int, seed: int, out_dir) -> DatasetManifest:
    """Write n procedural pairs plus a manifest; 80/20 train/val split."""
    if size % 4:
        raise ConfigError(f"size {size} must be divisible by 4")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_train = int(round(TRAIN_FRACTION * n))
    entries = []
    for i in range(n):
        gt = _procedural_gt(size, rng)
        gamma = rng.uniform(2.0, 5.0)
        gain = rng.uniform(0.1, 0.5)
        sigma = rng.uniform(0.0, 0.05)
        pair_seed = int(rng.integers(0, 2 ** 31))
        low = synth_pair(gt, gamma, gain, sigma, pair_seed)
        low_name, gt_name = f"low_{i:04d}.ppm", f"gt_{i:04d}.ppm"
        save_ppm(low, out_dir / low_name)
        save_ppm(gt, out_dir / gt_name)
        split = "train" if i < n_train else "val"
        entries.append((low_name, gt_name, split))
    manifest = DatasetManifest(root=out_dir, entries=entries, seed=seed)
    write_manifest(manifest)
    return manifest


# ---------------------------------------------------------------------------
# augmentation


def augment(low: np.ndarray, gt: np.ndarray, patch: int,
            rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Jointly flip/rotate and random-crop a pair; identical transform and
    crop window for both images."""
    h, w, _ = low.shape
    if gt.shape != low.shape:
        raise ShapeError(f"augment: pair shapes differ, {low.shape} vs {gt.shape}")
    if patch > h or patch > w:
        raise ConfigError(f"patch {patch} larger than image {h}x{w}")
    if rng.random() < 0.5:
        low, gt = low[:, ::-1], gt[:, ::-1]
    if rng.random() < 0.5:
        low, gt = low[::-1], gt[::-1]
    k = int(rng.integers(0, 4))
    low, gt = np.rot90(low, k), np.rot90(gt, k)
    hh, ww, _ = low.shape
    y0 = int(rng.integers(0, hh - patch + 1))
    x0 = int(rng.integers(0, ww - patch + 1))
    window = (slice(y0, y0 + patch), slice(x0, x0 + patch))
    return np.ascontiguousarray(low[window]), np.ascontiguousarray(gt[window])


def corpus_input_psnr(manifest: DatasetManifest, split: str = "val") -> float:
    """Mean PSNR of the unenhanced low inputs against ground truth."""
    from .losses import psnr

    vals = [psnr(load_ppm(lp), load_ppm(gp)) for lp, gp in manifest.pairs(split)]
    if not vals:
        raise DataError(f"split {split!r} is empty")
    return float(np.mean([v for v in vals if math.isfinite(v)]))
