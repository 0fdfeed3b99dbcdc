"""Flat key=value run configuration.

One plain-text file (``key = value`` lines, ``#`` comments, no sections)
drives generation, model construction, losses, and training. Every key can be
overridden on the command line; unknown keys are rejected loudly so typos
can't silently fall back to defaults. `resolved_text` serializes the full
effective config, and parsing that snapshot reproduces the run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_kv_text",
    "cast_value",
    "format_value",
    "load_config",
    "resolved_text",
    "config_keys",
]


class ConfigError(Exception):
    """Bad key, bad value, or malformed config text."""


@dataclass
class RunConfig:
    """Every tunable in one place; defaults are the desk-scale baseline."""

    # dataset generation
    height: int = 64
    width: int = 96
    t_raw: int = 24
    actor_min: int = 6
    actor_max: int = 10
    speed_min: float = 1.7
    speed_max: float = 3.4
    jitter: float = 0.25
    data_seed: int = 0

    # model dimensions
    channels: int = 32
    tokens: int = 8
    blocks: int = 3
    heads: int = 4
    widths: Tuple[int, ...] = (16, 32, 64)
    n_classes: int = 8
    use_ffn: bool = True
    use_pos: bool = True

    # relation module
    actor_layers: int = 2
    actor_kernel: int = 3
    actor_padding: str = "same"
    group_layers: int = 2
    group_kt: int = 3
    group_ks: int = 3
    group_st: int = 1
    group_ss: int = 1
    share_relation: bool = True
    detach_mode: str = "conv-input"
    paths: str = "both"  # both | actor | group

    # losses
    tau: float = 0.5
    k_flm: int = 6
    flm_style: str = "contrastive"
    tco_style: str = "contrastive"
    rho_gating: str = "per-sample"
    include_positive: bool = False
    use_flm: bool = True
    use_tco: bool = True
    use_gf: bool = True

    # flow preprocessing
    flow_q: float = 0.85
    per_clip_norm: bool = False

    # training
    epochs: int = 30
    batch: int = 4
    t_frames: int = 6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    decoupled_decay: bool = False
    lr_min: float = 1e-6
    lr_peak: float = 1e-4
    warmup_epochs: int = 5
    train_seed: int = 0
    flip_augment: bool = False
    brightness_augment: bool = True
    sampling: str = "segment"  # segment | random

    def validate(self) -> None:
        if self.paths not in ("both", "actor", "group"):
            raise ConfigError(f"paths must be both|actor|group, got {self.paths!r}")
        if self.sampling not in ("segment", "random"):
            raise ConfigError(f"sampling must be segment|random, got {self.sampling!r}")
        if not (0 < self.flow_q < 1):
            raise ConfigError(f"flow_q must sit in (0, 1), got {self.flow_q}")
        if self.epochs <= 0 or self.batch <= 0 or self.t_frames <= 0:
            raise ConfigError("epochs, batch and t_frames must be positive")
        if not (0 <= self.warmup_epochs < self.epochs):
            raise ConfigError(
                f"need 0 <= warmup_epochs < epochs, got {self.warmup_epochs} "
                f"vs {self.epochs}")
        for nm in ("lr_min", "lr_peak", "tau", "eps"):
            if getattr(self, nm) <= 0:
                raise ConfigError(f"{nm} must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def config_keys() -> Tuple[str, ...]:
    return tuple(_FIELDS)


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def cast_value(key: str, raw: str):
    """Cast a raw string to the declared type of config key `key`."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = getattr(RunConfig, key)
    try:
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw.strip())
        if isinstance(default, float):
            return float(raw.strip())
        if isinstance(default, tuple):
            parts = [p for p in raw.replace(",", " ").split() if p]
            return tuple(int(p) for p in parts)
        return raw.strip()
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from e


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_kv_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """`key = value` per line; `#` starts a comment; blank lines skipped.

    Returns raw strings keyed by name. A key appearing twice is rejected —
    silent last-wins hides editing mistakes.
    """
    out: Dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{ln}: expected key = value, got {line!r}")
        key, _, val = body.partition("=")
        key = key.strip()
        val = val.strip()
        if not key:
            raise ConfigError(f"{source}:{ln}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{ln}: duplicate key {key!r}")
        out[key] = val
    return out


def load_config(path: Optional[str] = None,
                overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Defaults <- config file <- overrides, with unknown keys rejected."""
    raw: Dict[str, str] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        raw.update(parse_kv_text(text, source=str(path)))
    if overrides:
        raw.update(overrides)
    kwargs = {}
    for key, val in raw.items():
        kwargs[key] = cast_value(key, val)
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def resolved_text(cfg: RunConfig) -> str:
    """Serialize the effective config; parsing it back reproduces `cfg`."""
    lines = [f"{name} = {format_value(getattr(cfg, name))}" for name in _FIELDS]
    return "\n".join(lines) + "\n"
