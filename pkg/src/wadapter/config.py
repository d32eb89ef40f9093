"""Flat key = value run configuration.

Unknown keys are rejected, every default is listed here, and the effective
config is echoed into each output directory so any run is replayable from its
echo alone.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError

OUT_ROOT_ENV = "WADAPTER_OUT"


@dataclass
class RunConfig:
    profile: str = "toy"
    seed: int = 0
    out_root: str = "runs"
    # dataset
    n_stage1: int = 256
    n_stage2: int = 256
    # training
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.01
    cond_drop_prob: float = 0.05
    pretrain_steps: int = 4000
    pretrain_lr: float = 1e-3
    stage1_steps: int = 2000
    stage2_steps: int = 1200
    gamma1: float = 1.5
    gamma2: float = 1.0
    aug_mode: str = "both"
    aug_sigma: float = 0.1
    log_every: int = 1
    checkpoint_every: int = 0
    # sampling
    sampler_steps: int = 50
    guidance_scale: float = 7.5
    identity_scale: float = 1.0
    image_size: int = 64
    # evaluation
    eval_identities: int = 16
    eval_prompts: int = 8

    def echo(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def write_echo(self, out_dir: Path) -> None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "config.echo.txt").write_text(self.echo())


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        try:
            setattr(cfg, key, _coerce(key, value))
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config_text(Path(path).read_text())
