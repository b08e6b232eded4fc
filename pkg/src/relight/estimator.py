"""Scikit-learn-compatible wrapper around the enhancement model.

``LowLightEnhancer`` exposes the fit/transform surface so the model composes
with sklearn pipelines and clone(); internally it drives the same training
loop as the CLI. X is an array-like of HxWx3 low-light images in [0, 1]; y
holds the matching ground-truth images.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .config import RunConfig
from .data import DatasetManifest, save_ppm, write_manifest
from .errors import ShapeError
from .numerics import no_grad
from .train import train


def validate_images(X, name: str = "X") -> list:
    """Check an array-like of HxWx3 images with values in [0, 1]; extents
    must be divisible by 4."""
    imgs = []
    for i, img in enumerate(X):
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[-1] != 3:
            raise ShapeError(f"{name}[{i}]: expected HxWx3, got {arr.shape}")
        if arr.shape[0] % 4 or arr.shape[1] % 4:
            raise ShapeError(f"{name}[{i}]: extents {arr.shape[:2]} "
                             f"must be divisible by 4")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"{name}[{i}]: values outside [0, 1]")
        imgs.append(arr)
    if not imgs:
        raise ValueError(f"{name} is empty")
    return imgs


class LowLightEnhancer(TransformerMixin, BaseEstimator):
    """Low-light image enhancer with a fit/transform interface."""

    def __init__(self, base_width=8, base_heads=1, blocks="1,1,2", tau=1,
                 modalities="depth,luminance,semantic", lr=2e-4,
                 schedule="cosine", iterations=200, batch_size=4,
                 patch_size=32, lambda_per=0.5, seed=0):
        self.base_width = base_width
        self.base_heads = base_heads
        self.blocks = blocks
        self.tau = tau
        self.modalities = modalities
        self.lr = lr
        self.schedule = schedule
        self.iterations = iterations
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.lambda_per = lambda_per
        self.seed = seed

    def _run_config(self, workdir: Path, manifest_path: Path) -> RunConfig:
        cfg = RunConfig()
        pairs = [
            ("model.base_width", self.base_width),
            ("model.base_heads", self.base_heads),
            ("model.blocks", self.blocks),
            ("model.tau", self.tau),
            ("model.modalities", self.modalities),
            ("model.seed", self.seed),
            ("optim.lr", self.lr),
            ("optim.schedule", self.schedule),
            ("optim.iterations", self.iterations),
            ("optim.batch_size", self.batch_size),
            ("optim.patch_size", self.patch_size),
            ("optim.lambda_per", self.lambda_per),
            ("optim.seed", self.seed),
            ("data.manifest", manifest_path),
            ("io.checkpoint_dir", workdir / "checkpoints"),
            ("io.log_path", workdir / "train_log.jsonl"),
        ]
        for key, value in pairs:
            cfg.set(key, str(value))
        cfg.validate()
        return cfg

    def fit(self, X, y):
        lows = validate_images(X, "X")
        gts = validate_images(y, "y")
        if len(lows) != len(gts):
            raise ValueError(f"X has {len(lows)} images but y has {len(gts)}")
        with tempfile.TemporaryDirectory(prefix="relight-fit-") as tmp:
            root = Path(tmp)
            entries = []
            for i, (low, gt) in enumerate(zip(lows, gts)):
                if low.shape != gt.shape:
                    raise ShapeError(f"pair {i}: shapes {low.shape} vs {gt.shape}")
                ln, gn = f"low_{i:04d}.ppm", f"gt_{i:04d}.ppm"
                save_ppm(low, root / ln)
                save_ppm(gt, root / gn)
                entries.append((ln, gn, "train"))
            manifest = DatasetManifest(root=root, entries=entries)
            manifest_path = root / "manifest.tsv"
            write_manifest(manifest, manifest_path)
            config = self._run_config(root, manifest_path)
            result = train(config)
        self.model_ = result.model
        self.train_records_ = result.records
        return self

    def transform(self, X):
        if not hasattr(self, "model_"):
            raise NotFittedError("fit the enhancer before calling transform")
        imgs = validate_images(X, "X")
        out = []
        with no_grad():
            for img in imgs:
                out.append(self.model_.enhance(img).data)
        return np.stack(out)

    # enhancement is a mapping, not a classifier, but predict is a
    # convenient alias for pipeline-style callers
    predict = transform
