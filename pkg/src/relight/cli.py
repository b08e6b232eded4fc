"""Operator surface: synth | train | eval | enhance | gradcheck.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure (NaN loss or failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .config import load_config, parse_config
from .data import generate_corpus, load_ppm, read_manifest, save_ppm
from .errors import ConfigError, DataError, NumericError, RelightError
from .losses import psnr, ssim
from .mmcab import EnhancerModel, FusionBlock, RestorerConfig
from .modalities import default_registry
from .numerics import Tensor, grad_check, ops
from .train import train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _json_safe(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def build_parser() -> _Parser:
    parser = _Parser(prog="relight",
                     description="Multi-modal low-light image enhancement")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired corpus")
    p.add_argument("--n", type=int, required=True, help="number of pairs")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="val", choices=["train", "val"])
    p.add_argument("--out", default="-", help="metrics JSONL path ('-' = stdout)")
    p.add_argument("--identity", action="store_true",
                   help="sanity flag: score ground truth against itself")

    p = sub.add_parser("enhance", help="enhance one PPM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--tau", type=int, default=None,
                   help="override refinement stage count")

    p = sub.add_parser("gradcheck", help="audit analytic gradients")
    p.add_argument("--config", default=None)
    p.add_argument("--scope", default="block", choices=["block", "full"])
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=None,
                   help="coordinates probed per parameter (full scope "
                        "defaults to 32; block scope is exhaustive)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grad-scale", type=float, default=1.0,
                   help=argparse.SUPPRESS)   # test hook: corrupt analytic side
    return parser


def cmd_synth(args) -> int:
    manifest = generate_corpus(args.n, args.size, args.seed, args.out)
    train_n, val_n = manifest.split_sizes()
    print(f"wrote {len(manifest.entries)} pairs to {args.out} "
          f"({train_n} train, {val_n} val)")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)

    def log(rec):
        msg = f"step {rec.step:6d}  lr {rec.lr:.2e}  train {rec.train_loss:.5f}"
        if rec.val_psnr is not None:
            msg += (f"  val loss {rec.val_loss:.5f}  psnr {rec.val_psnr:.2f}"
                    f"  ssim {rec.val_ssim:.4f}")
        print(msg)

    result = train(config, log_fn=log)
    print(f"final checkpoint: {result.final_path}")
    if result.best_path:
        print(f"best checkpoint:  {result.best_path}")
    return 0


def _model_from_checkpoint(path):
    ckpt = load_checkpoint(path)
    config = parse_config(ckpt["config_text"])
    model_cfg = config.model_config()
    registry = default_registry(ckpt["semantic_seed"],
                                list(model_cfg.modalities))
    model = EnhancerModel(model_cfg, registry)
    load_checkpoint(path, model)
    return model, config, ckpt


def cmd_eval(args) -> int:
    model, config, ckpt = _model_from_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    pairs = manifest.pairs(args.split)
    if not pairs:
        raise DataError(f"split {args.split!r} is empty")
    out = sys.stdout if args.out == "-" else open(args.out, "w")
    try:
        psnrs, ssims = [], []
        for low_path, gt_path in pairs:
            gt = load_ppm(gt_path)
            if args.identity:
                pred = gt
            else:
                from .numerics import no_grad

                with no_grad():
                    pred = model.enhance(load_ppm(low_path)).data
            p, s = psnr(pred, gt), ssim(pred, gt)
            psnrs.append(p)
            ssims.append(s)
            out.write(json.dumps({"file": str(low_path), "psnr_db": _json_safe(p),
                                  "ssim": s}) + "\n")
        finite = [p for p in psnrs if math.isfinite(p)]
        mean_psnr = float(np.mean(finite)) if finite else math.inf
        out.write(json.dumps({"aggregate": True, "count": len(pairs),
                              "mean_psnr_db": _json_safe(mean_psnr),
                              "mean_ssim": float(np.mean(ssims))}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_enhance(args) -> int:
    model, config, ckpt = _model_from_checkpoint(args.checkpoint)
    img = load_ppm(args.input)
    h, w, _ = img.shape
    ph = (-h) % 4
    pw = (-w) % 4
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect") \
        if (ph or pw) else img
    from .numerics import no_grad

    times: list = []
    with no_grad():
        out = model.enhance(padded, tau=args.tau, stage_times=times).data
    out = out[:h, :w]
    save_ppm(out, args.output)
    for i, t in enumerate(times, 1):
        print(f"stage {i}: {t:.3f}s")
    print(f"wrote {args.output} ({w}x{h})")
    return 0


def _randomize(params, rng):
    # gate weights are zero-initialized by design; gradcheck wants every
    # parameter off its special point
    for p in params:
        if p.trainable:
            p.data = rng.uniform(-0.3, 0.3, size=p.data.shape)


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    modalities = ("depth", "luminance", "semantic")
    if args.scope == "block":
        width, h, w = 8, 4, 4
        block = FusionBlock(width, 1, modalities, 2, rng)
        params = block.parameters()
        _randomize(params, rng)
        f_in = Tensor(rng.standard_normal((h, w, width)))
        f_lu = Tensor(rng.standard_normal((h, w, width)))
        feats = {m: Tensor(rng.standard_normal((h, w, width)))
                 for m in modalities}

        def loss_fn():
            out = block(f_in, f_lu, feats)
            return ops.scale(ops.sum_all(ops.mul(out, out)), 0.5)

        max_entries = args.max_entries
    else:
        cfg = RestorerConfig(base_width=4, base_heads=1, blocks=(1, 1, 1),
                             tau=1, modalities=modalities, seed=args.seed)
        registry = default_registry(cfg.semantic_seed, list(modalities))
        model = EnhancerModel(cfg, registry)
        params = model.parameters()
        _randomize(params, rng)
        img = rng.uniform(0.05, 0.95, size=(8, 8, 3))
        target = Tensor(rng.uniform(0.0, 1.0, size=(8, 8, 3)))

        def loss_fn():
            d = ops.sub(model.enhance(img), target)
            return ops.scale(ops.sum_all(ops.mul(d, d)), 0.5)

        max_entries = 32 if args.max_entries is None else args.max_entries

    report = grad_check(loss_fn, params, tol=args.tol,
                        max_entries_per_param=max_entries,
                        rng=np.random.default_rng(args.seed),
                        grad_scale=args.grad_scale)
    print(report.format_table())
    if not report.passed:
        raise NumericError(f"gradient check failed "
                           f"(max rel err {report.max_rel_err:.3e})")
    return 0


_COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
             "enhance": cmd_enhance, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except RelightError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
