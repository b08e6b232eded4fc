"""Flat `section.key = value` run configuration.

Human-diffable, no nesting. Every key has a documented default below;
unknown keys are rejected outright.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from .errors import ConfigError
from .mmcab import RestorerConfig

_DEFAULTS = {
    # model
    "model.base_width": 8,          # channel width C at scale 0
    "model.base_heads": 1,          # heads at scale 0, doubled per scale
    "model.blocks": "1,1,2",        # encoder s0, s1, bottleneck (decoder mirrors)
    "model.ffn_expansion": 2,
    "model.tau": 1,                 # refinement stages, 1..3
    "model.modalities": "depth,luminance,semantic",
    "model.seed": 0,                # weight-init seed
    "model.semantic_seed": 1234,    # frozen semantic-stub seed
    "model.proxy_seed": 7,          # frozen perceptual-proxy seed
    "model.share_stage_weights": False,
    "model.prior_mode": "mean",     # or "max"
    # optim
    "optim.lr": 2e-4,
    "optim.schedule": "cosine",     # or "plateau"
    "optim.batch_size": 4,
    "optim.patch_size": 32,
    "optim.iterations": 200,
    "optim.lambda_per": 0.5,
    "optim.eval_interval": 25,
    "optim.seed": 0,                # sampling/augmentation seed
    # data
    "data.manifest": "",
    "data.augment": True,
    # io
    "io.checkpoint_dir": "checkpoints",
    "io.log_path": "train_log.jsonl",
}

_SCHEDULES = ("cosine", "plateau")


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(_DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key: str, raw: str):
        if key not in _DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        default = _DEFAULTS[key]
        try:
            if isinstance(default, bool):
                if str(raw).lower() not in ("true", "false", "0", "1"):
                    raise ValueError(raw)
                value = str(raw).lower() in ("true", "1")
            elif isinstance(default, int):
                value = int(raw)
            elif isinstance(default, float):
                value = float(raw)
            else:
                value = str(raw)
        except ValueError:
            raise ConfigError(f"bad value {raw!r} for {key}") from None
        self.values[key] = value

    def validate(self):
        if self["optim.schedule"] not in _SCHEDULES:
            raise ConfigError(f"optim.schedule must be one of {_SCHEDULES}")
        if self["model.tau"] not in (1, 2, 3):
            raise ConfigError("model.tau must be 1, 2, or 3")
        if self["optim.lr"] <= 0:
            raise ConfigError("optim.lr must be positive")
        self.model_config()   # raises on inconsistent widths/heads/blocks

    def modality_names(self) -> List[str]:
        raw = self["model.modalities"].strip()
        return [m.strip() for m in raw.split(",") if m.strip()] if raw else []

    def model_config(self) -> RestorerConfig:
        blocks = tuple(int(b) for b in str(self["model.blocks"]).split(","))
        return RestorerConfig(
            base_width=self["model.base_width"],
            base_heads=self["model.base_heads"],
            blocks=blocks,
            ffn_expansion=self["model.ffn_expansion"],
            tau=self["model.tau"],
            modalities=tuple(self.modality_names()),
            seed=self["model.seed"],
            semantic_seed=self["model.semantic_seed"],
            share_stage_weights=self["model.share_stage_weights"],
            prior_mode=self["model.prior_mode"],
        )

    def serialize(self) -> str:
        lines = []
        for key in _DEFAULTS:
            v = self.values[key]
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, raw = stripped.partition("=")
        cfg.set(key.strip(), raw.strip())
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())
