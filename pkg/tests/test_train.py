"""Optimizer, schedules, and training-loop behavior on tiny corpora."""

import json
import math

import numpy as np
import pytest

from relight.config import parse_config
from relight.data import generate_corpus
from relight.errors import DataError
from relight.numerics import Parameter
from relight.train import (Adam, CosineSchedule, PlateauSchedule,
                           evaluate_model, train)


def _param(value):
    p = Parameter(np.array(value, dtype=np.float64), name="p")
    return p


class TestAdam:
    def test_two_steps_match_hand_computation(self):
        p = _param([1.0])
        opt = Adam([p], lr=0.1)
        m = v = 0.0
        x = 1.0
        for g in (0.5, -0.2):
            p.tensor.grad = np.array([g])
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mhat = m / (1 - 0.9 ** opt.t)
            vhat = v / (1 - 0.999 ** opt.t)
            x = x - 0.1 * mhat / (math.sqrt(vhat) + 1e-8)
            assert p.data[0] == pytest.approx(x, abs=1e-15)

    def test_first_step_is_nearly_signed_lr(self):
        # bias correction makes step one approximately lr * sign(g)
        p = _param([0.0])
        opt = Adam([p], lr=0.01)
        p.tensor.grad = np.array([3.7])
        opt.step()
        assert p.data[0] == pytest.approx(-0.01, rel=1e-6)

    def test_frozen_parameter_untouched(self):
        p = _param([2.0])
        p.tensor.requires_grad = False
        opt = Adam([p], lr=0.1)
        p.tensor.grad = np.array([1.0])
        opt.step()
        assert p.data[0] == 2.0

    def test_zero_grad_clears(self):
        p = _param([1.0])
        opt = Adam([p], lr=0.1)
        p.tensor.grad = np.array([1.0])
        opt.zero_grad()
        assert p.grad is None


class TestSchedules:
    def test_cosine_endpoints_and_midpoint(self):
        s = CosineSchedule(1e-3, 100, floor=1e-6)
        assert s.lr_at(0) == pytest.approx(1e-3, abs=1e-12)
        assert s.lr_at(50) == pytest.approx((1e-3 + 1e-6) / 2, rel=1e-9)
        assert s.lr_at(100) == pytest.approx(1e-6, abs=1e-12)
        assert s.lr_at(200) == pytest.approx(1e-6, abs=1e-12)

    def test_cosine_monotone_decreasing(self):
        s = CosineSchedule(1e-3, 50)
        lrs = [s.lr_at(t) for t in range(51)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_plateau_halves_after_patience(self):
        s = PlateauSchedule(1e-3, factor=0.5, patience=2)
        s.observe(1.0)                      # new best
        assert s.lr_at(0) == 1e-3
        for _ in range(3):                  # stale > patience triggers decay
            s.observe(1.0)
        assert s.lr_at(0) == 5e-4

    def test_plateau_resets_on_improvement(self):
        s = PlateauSchedule(1e-3, factor=0.5, patience=2)
        s.observe(1.0)
        s.observe(1.0)
        s.observe(0.5)                      # improvement resets staleness
        s.observe(0.6)
        s.observe(0.6)
        assert s.lr_at(0) == 1e-3

    def test_plateau_respects_floor(self):
        s = PlateauSchedule(4e-6, factor=0.5, patience=0)
        for _ in range(10):
            s.observe(1.0)
        assert s.lr_at(0) == 1e-6


def _train_config(tmp_path, **overrides):
    corpus = tmp_path / "corpus"
    generate_corpus(5, 16, seed=0, out_dir=corpus)
    lines = {
        "model.base_width": "4",
        "model.blocks": "1,1,1",
        "optim.iterations": "2",
        "optim.batch_size": "1",
        "optim.patch_size": "16",
        "optim.eval_interval": "1",
        "data.manifest": str(corpus / "manifest.tsv"),
        "io.checkpoint_dir": str(tmp_path / "ckpt"),
        "io.log_path": str(tmp_path / "log.jsonl"),
    }
    lines.update(overrides)
    return parse_config("\n".join(f"{k} = {v}" for k, v in lines.items()))


class TestTrainLoop:
    def test_smoke_run_writes_checkpoints_and_log(self, tmp_path):
        result = train(_train_config(tmp_path))
        assert result.final_path.exists()
        assert result.best_path.exists()
        assert len(result.records) == 2
        assert math.isfinite(result.final_val_psnr)
        lines = (tmp_path / "log.jsonl").read_text().splitlines()
        assert len(lines) == 2
        rec = json.loads(lines[0])
        assert rec["step"] == 1
        assert math.isfinite(rec["val_loss"])

    def test_reruns_are_bit_identical(self, tmp_path):
        from relight.checkpoint import load_checkpoint

        a = train(_train_config(tmp_path, **{
            "io.checkpoint_dir": str(tmp_path / "a")}))
        b = train(_train_config(tmp_path, **{
            "io.checkpoint_dir": str(tmp_path / "b")}))
        pa = load_checkpoint(a.final_path)["params"]
        pb = load_checkpoint(b.final_path)["params"]
        assert set(pa) == set(pb)
        for name in pa:
            assert np.array_equal(pa[name], pb[name]), name

    def test_missing_manifest_rejected(self, tmp_path):
        cfg = _train_config(tmp_path, **{
            "data.manifest": str(tmp_path / "nope.tsv")})
        with pytest.raises(DataError):
            train(cfg)

    def test_evaluate_model_runs_without_grad(self, tmp_path):
        from relight.losses import PerceptualProxy
        from relight.mmcab import EnhancerModel
        from relight.modalities import default_registry

        cfg = _train_config(tmp_path)
        mc = cfg.model_config()
        model = EnhancerModel(mc, default_registry(
            mc.semantic_seed, list(mc.modalities)))
        from relight.data import read_manifest
        pairs = read_manifest(cfg["data.manifest"]).pairs("val")
        loss, p, s = evaluate_model(model, pairs, PerceptualProxy(), 0.5)
        assert math.isfinite(loss)
        assert math.isfinite(p)
        assert -1.0 <= s <= 1.0
