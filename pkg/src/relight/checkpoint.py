"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"RLCK"
    version u32
    config  u32 length + utf-8 flat config text
    seeds   u32 semantic-stub seed, u32 perceptual-proxy seed
    step    u64 training step counter
    params  u32 count, then per parameter:
              u16 name length + utf-8 dotted name
              u8 ndim, u32 per dim
              raw float64 payload
    opt     u8 flag; when 1: u64 Adam step, then per parameter the first-
            and second-moment float64 payloads in the same order

The version is checked before any tensor bytes are read; load(save(model))
reproduces every parameter bitwise.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .numerics import Module

MAGIC = b"RLCK"
VERSION = 1


def _write_blob(f, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    f.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(arr.tobytes())


def _read_blob(f) -> np.ndarray:
    (ndim,) = struct.unpack("<B", _read(f, 1))
    shape = tuple(struct.unpack("<I", _read(f, 4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read(f, 8 * count), dtype="<f8")
    return data.reshape(shape).astype(np.float64)


def _read(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise DataError("checkpoint truncated")
    return b


def save_checkpoint(path, model: Module, config_text: str, step: int = 0,
                    semantic_seed: int = 0, proxy_seed: int = 0,
                    optimizer=None):
    params = model.parameters()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    ctext = config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(ctext)))
    buf.write(ctext)
    buf.write(struct.pack("<II", semantic_seed, proxy_seed))
    buf.write(struct.pack("<Q", step))
    buf.write(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        buf.write(struct.pack("<H", len(name)))
        buf.write(name)
        _write_blob(buf, p.data)
    if optimizer is not None:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<Q", optimizer.t))
        for m, v in zip(optimizer.m, optimizer.v):
            _write_blob(buf, m)
            _write_blob(buf, v)
    else:
        buf.write(struct.pack("<B", 0))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, model: Optional[Module] = None):
    """Read a checkpoint; when a model is given, its parameters are filled
    in place (names and shapes must match). Returns a dict with the config
    text, seeds, step, parameter map, and optional optimizer state."""
    raw = Path(path).read_bytes()
    f = io.BytesIO(raw)
    if _read(f, 4) != MAGIC:
        raise DataError(f"{path}: not a relight checkpoint")
    (version,) = struct.unpack("<I", _read(f, 4))
    if version != VERSION:
        raise DataError(f"{path}: checkpoint version {version}, expected {VERSION}")
    (clen,) = struct.unpack("<I", _read(f, 4))
    config_text = _read(f, clen).decode("utf-8")
    semantic_seed, proxy_seed = struct.unpack("<II", _read(f, 8))
    (step,) = struct.unpack("<Q", _read(f, 8))
    (count,) = struct.unpack("<I", _read(f, 4))
    params = {}
    order = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read(f, 2))
        name = _read(f, nlen).decode("utf-8")
        params[name] = _read_blob(f)
        order.append(name)
    (opt_flag,) = struct.unpack("<B", _read(f, 1))
    opt_state = None
    if opt_flag:
        (t,) = struct.unpack("<Q", _read(f, 8))
        moments = [( _read_blob(f), _read_blob(f)) for _ in range(count)]
        opt_state = {"t": t, "moments": moments}
    if model is not None:
        model_params = model.parameters()
        names = {p.name for p in model_params}
        if names != set(params):
            missing = sorted(set(params) - names)[:3]
            extra = sorted(names - set(params))[:3]
            raise DataError(f"{path}: parameter names do not match model "
                            f"(checkpoint-only: {missing}, model-only: {extra})")
        for p in model_params:
            blob = params[p.name]
            if blob.shape != p.data.shape:
                raise DataError(f"{path}: {p.name} shape {blob.shape} != "
                                f"model shape {p.data.shape}")
            p.data = blob
    return {"config_text": config_text, "semantic_seed": semantic_seed,
            "proxy_seed": proxy_seed, "step": step, "params": params,
            "param_order": order, "optimizer": opt_state}
