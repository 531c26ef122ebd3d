"""Run configuration files: flat key/value text with sections.

The file format is INI as understood by configparser. Every key maps
onto a field of one of three dataclasses and is type-checked against it:

    [model]   ModelConfig fields (mode, target, depth, hidden, d_state,
              n_mels, compress_div, frequency_domain, norm_k)
    [train]   TrainConfig fields (lr0, lr_decay, clip_norm, batch_size,
              epochs, steps_per_epoch, weight_decay, seed, stop_loss_ratio)
    [synth]   SynthParams fields (reverb_prob, snr_range, dbfs_range)
    [norm]    aliases: mode -> model.mode, K -> model.norm_k,
              target_dbfs_range -> synth.dbfs_range

Ranges are written "lo,hi". Command-line flags arrive as
"section.key" -> string overrides and win over the file. Unknown
sections or keys, malformed values, and alias conflicts all raise
ConfigError so the CLI can exit distinctly on bad configuration.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass

from .model import ModelConfig
from .normalize import TARGET_DBFS_RANGE
from .synth import REVERB_PROB, SNR_RANGE
from .train import TrainConfig


class ConfigError(Exception):
    """Configuration file or override rejected."""


@dataclass(frozen=True)
class SynthParams:
    reverb_prob: float = REVERB_PROB
    snr_range: tuple = SNR_RANGE
    dbfs_range: tuple = TARGET_DBFS_RANGE

    def __post_init__(self):
        if not 0.0 <= self.reverb_prob <= 1.0:
            raise ValueError("reverb_prob must be in [0, 1]")
        for name in ("snr_range", "dbfs_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be (lo, hi) with lo <= hi")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    synth: SynthParams = SynthParams()


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "synth": SynthParams}
_ALIASES = {
    ("norm", "mode"): ("model", "mode"),
    ("norm", "k"): ("model", "norm_k"),
    ("norm", "target_dbfs_range"): ("synth", "dbfs_range"),
}


def _coerce(name: str, field: dataclasses.Field, raw: str):
    raw = raw.strip()
    t = field.type
    try:
        if t in ("int", int):
            return int(raw)
        if t in ("float", float):
            return float(raw)
        if t in ("float | None", "Optional[float]"):
            return None if raw.lower() in ("none", "") else float(raw)
        if t in ("tuple", tuple):
            parts = [p for p in raw.replace(",", " ").split() if p]
            if len(parts) != 2:
                raise ValueError("expected two numbers")
            return (float(parts[0]), float(parts[1]))
        if t in ("str", str):
            return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r} ({exc})") from exc
    raise ConfigError(f"unsupported field type for {name}: {t!r}")


def parse_file(path: str) -> dict:
    """-> {(section, key): raw string}; keys are lowercased."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            values[(section.lower(), key.lower())] = raw
    return values


def build_run_config(values: dict) -> RunConfig:
    """Resolve aliases, type-check every key, construct the dataclasses."""
    resolved: dict[tuple, str] = {}
    origin: dict[tuple, tuple] = {}
    for (section, key), raw in values.items():
        target = _ALIASES.get((section, key), (section, key))
        if target in resolved and resolved[target] != raw:
            raise ConfigError(
                f"{section}.{key} conflicts with "
                f"{origin[target][0]}.{origin[target][1]}")
        resolved[target] = raw
        origin[target] = (section, key)
    kwargs: dict[str, dict] = {s: {} for s in _SECTIONS}
    for (section, key), raw in resolved.items():
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"unknown config section [{section}]")
        fields = {f.name.lower(): f for f in dataclasses.fields(cls)}
        field = fields.get(key)
        if field is None:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        kwargs[section][field.name] = _coerce(f"{section}.{key}", field, raw)
    try:
        return RunConfig(model=ModelConfig(**kwargs["model"]),
                         train=TrainConfig(**kwargs["train"]),
                         synth=SynthParams(**kwargs["synth"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: str | None = None,
                    overrides: dict | None = None) -> RunConfig:
    """Config file (optional) plus {(section, key): raw} overrides."""
    values = parse_file(path) if path else {}
    for (section, key), raw in (overrides or {}).items():
        values[(section.lower(), key.lower())] = raw
    return build_run_config(values)
