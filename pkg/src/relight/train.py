"""Adam optimizer, learning-rate schedules, and the training loop.

Everything is seeded; two runs with the same config produce bit-identical
checkpoints. Gradients are averaged over the batch, one Adam step per
iteration, evaluation on the val split every ``optim.eval_interval`` steps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import augment, load_ppm, read_manifest
from .errors import DataError, NumericError
from .losses import PerceptualProxy, combined_loss, psnr, ssim
from .mmcab import EnhancerModel
from .modalities import default_registry
from .numerics import backward, no_grad, zero_grads


class Adam:
    def __init__(self, params, lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if not p.trainable:
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1 ** self.t)
            vhat = self.v[i] / (1 - self.beta2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        zero_grads(self.params)


class CosineSchedule:
    def __init__(self, base_lr: float, total_steps: int, floor: float = 1e-6):
        self.base_lr = base_lr
        self.total = max(total_steps, 1)
        self.floor = floor

    def lr_at(self, step: int) -> float:
        frac = min(step / self.total, 1.0)
        return self.floor + 0.5 * (self.base_lr - self.floor) * (1 + math.cos(math.pi * frac))

    def observe(self, val_loss: float):
        pass


class PlateauSchedule:
    """Halve the rate when validation loss stops improving; floor 1e-6."""

    def __init__(self, base_lr: float, factor: float = 0.5, patience: int = 5,
                 floor: float = 1e-6):
        self.lr = base_lr
        self.factor = factor
        self.patience = patience
        self.floor = floor
        self.best = math.inf
        self.stale = 0

    def lr_at(self, step: int) -> float:
        return self.lr

    def observe(self, val_loss: float):
        if val_loss < self.best - 1e-12:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale > self.patience:
                self.lr = max(self.lr * self.factor, self.floor)
                self.stale = 0


@dataclass
class TrainRecord:
    step: int
    lr: float
    train_loss: float
    val_loss: Optional[float] = None
    val_psnr: Optional[float] = None
    val_ssim: Optional[float] = None


@dataclass
class TrainResult:
    model: EnhancerModel
    records: List[TrainRecord] = field(default_factory=list)
    best_path: Optional[Path] = None
    final_path: Optional[Path] = None

    @property
    def final_val_psnr(self) -> float:
        vals = [r.val_psnr for r in self.records if r.val_psnr is not None]
        return vals[-1] if vals else math.nan


def evaluate_model(model: EnhancerModel, pairs, proxy: PerceptualProxy,
                   lambda_per: float):
    """Mean (loss, psnr, ssim) over (low, gt) file pairs, no grad."""
    losses, psnrs, ssims = [], [], []
    with no_grad():
        for low_path, gt_path in pairs:
            low = load_ppm(low_path)
            gt = load_ppm(gt_path)
            pred = model.enhance(low)
            report = combined_loss(pred, gt, proxy, lambda_per)
            losses.append(report.total)
            p = psnr(pred.data, gt)
            if math.isfinite(p):
                psnrs.append(p)
            ssims.append(ssim(pred.data, gt))
    return (float(np.mean(losses)), float(np.mean(psnrs)) if psnrs else math.inf,
            float(np.mean(ssims)))


def train(config: RunConfig, log_fn=None) -> TrainResult:
    manifest = read_manifest(config["data.manifest"])
    train_pairs = manifest.pairs("train")
    val_pairs = manifest.pairs("val")
    if not train_pairs:
        raise DataError("train split is empty")

    model_cfg = config.model_config()
    registry = default_registry(model_cfg.semantic_seed,
                                list(model_cfg.modalities))
    model = EnhancerModel(model_cfg, registry)
    proxy = PerceptualProxy(config["model.proxy_seed"])
    params = model.parameters()

    iterations = config["optim.iterations"]
    base_lr = config["optim.lr"]
    optimizer = Adam(params, lr=base_lr)
    if config["optim.schedule"] == "cosine":
        schedule = CosineSchedule(base_lr, iterations)
    else:
        schedule = PlateauSchedule(base_lr)

    rng = np.random.default_rng(config["optim.seed"])
    lambda_per = config["optim.lambda_per"]
    batch_size = config["optim.batch_size"]
    patch = config["optim.patch_size"]
    eval_interval = config["optim.eval_interval"]
    do_augment = config["data.augment"]

    ckpt_dir = Path(config["io.checkpoint_dir"])
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(config["io.log_path"])
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_file = open(log_path, "w", encoding="ascii")

    # small in-memory image cache; the toy corpora fit comfortably
    cache: dict = {}

    def fetch(path):
        key = str(path)
        if key not in cache:
            cache[key] = load_ppm(path)
        return cache[key]

    result = TrainResult(model=model)
    best_val = math.inf
    config_text = config.serialize()

    def save(name, step):
        path = ckpt_dir / name
        save_checkpoint(path, model, config_text, step=step,
                        semantic_seed=model_cfg.semantic_seed,
                        proxy_seed=config["model.proxy_seed"],
                        optimizer=optimizer)
        return path

    try:
        for step in range(1, iterations + 1):
            optimizer.lr = schedule.lr_at(step - 1)
            optimizer.zero_grad()
            batch_loss = 0.0
            idx = rng.integers(0, len(train_pairs), size=batch_size)
            for i in idx:
                low = fetch(train_pairs[i][0])
                gt = fetch(train_pairs[i][1])
                if do_augment:
                    low, gt = augment(low, gt, min(patch, low.shape[0]), rng)
                pred = model.enhance(low)
                report = combined_loss(pred, gt, proxy, lambda_per)
                backward(report.total_tensor)
                batch_loss += report.total
            batch_loss /= batch_size
            if not math.isfinite(batch_loss):
                raise NumericError(f"non-finite loss at step {step}")
            for p in params:                       # average over the batch
                if p.grad is not None:
                    p.tensor.grad = p.grad / batch_size
            optimizer.step()

            if step % eval_interval == 0 or step == iterations:
                val_loss = val_psnr = val_ssim = None
                if val_pairs:
                    val_loss, val_psnr, val_ssim = evaluate_model(
                        model, val_pairs, proxy, lambda_per)
                    schedule.observe(val_loss)
                    if val_loss < best_val:
                        best_val = val_loss
                        result.best_path = save("best.ckpt", step)
                rec = TrainRecord(step, optimizer.lr, batch_loss,
                                  val_loss, val_psnr, val_ssim)
                result.records.append(rec)
                log_file.write(json.dumps(vars(rec)) + "\n")
                log_file.flush()
                if log_fn:
                    log_fn(rec)
        result.final_path = save("final.ckpt", iterations)
    finally:
        log_file.close()
    return result
