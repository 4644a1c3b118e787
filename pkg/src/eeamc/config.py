"""
Flat ``section.key = value`` experiment configuration.

Every key has a default, so an empty file is a complete configuration.
Unknown sections or keys, malformed lines and bad values are rejected with
the offending line number.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .arch import ArchConfig, Variant
from .errors import ConfigurationError
from .inference import GateConfig
from .signals import GenConfig
from .train import TrainConfig


class ConfigParseError(ConfigurationError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class ArchSection:
    variant: str = "v1"
    seed: int = 0
    channels: tuple = (64, 64, 32, 32, 16, 16)
    kernel_size: int = 3
    fc_widths: tuple = (128, 64, 10)
    exit_width: int = 64
    dropout: float = 0.3

    def __post_init__(self):
        Variant.parse(self.variant)

    def to_arch_config(self) -> ArchConfig:
        return ArchConfig(conv_plan=tuple((c, self.kernel_size) for c in self.channels),
                          fc_widths=tuple(self.fc_widths), exit_widths=(self.exit_width, 10),
                          dropout=self.dropout)


@dataclass(frozen=True)
class GateSection:
    threshold: float = 0.35
    sweep: tuple = (0.05, 0.35, 0.6)
    repeats: int = 1

    def __post_init__(self):
        GateConfig(self.threshold, self.repeats)
        for t in self.sweep:
            GateConfig(t)

    def to_gate_config(self) -> GateConfig:
        return GateConfig(self.threshold, self.repeats)


@dataclass(frozen=True)
class PathsSection:
    dataset: str = "runs/dataset.amcd"
    checkpoint: str = "runs/model.eewt"
    out: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    arch: ArchSection = field(default_factory=ArchSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    gate: GateSection = field(default_factory=GateSection)
    paths: PathsSection = field(default_factory=PathsSection)

    @property
    def variant(self) -> Variant:
        return Variant.parse(self.arch.variant)


SECTIONS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def _hints(cls):
    return typing.get_type_hints(cls)


def _coerce(text: str, hint, default):
    """Convert ``text`` to the type of a config field."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (args and type(None) in args):
        if text.lower() in ("none", ""):
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text
    if hint is tuple or origin is tuple:
        items = [t.strip() for t in text.split(",") if t.strip()]
        elem = type(default[0]) if default else float
        return tuple(elem(t) for t in items)
    raise ValueError(f"unsupported field type {hint}")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def set_key(cfg: ExperimentConfig, dotted: str, text: str, line=None) -> ExperimentConfig:
    """Return ``cfg`` with ``section.key`` set from its textual value."""
    section, _, key = dotted.partition(".")
    if section not in SECTIONS or not key:
        raise ConfigParseError(f"unknown section in key {dotted!r}", line)
    sub = getattr(cfg, section)
    hints = _hints(type(sub))
    if key not in hints or key not in {f.name for f in dataclasses.fields(sub)}:
        raise ConfigParseError(f"unknown key {dotted!r}", line)
    try:
        value = _coerce(text, hints[key], getattr(sub, key))
        new_sub = dataclasses.replace(sub, **{key: value})
    except (ValueError, TypeError, ConfigurationError) as e:
        raise ConfigParseError(f"bad value for {dotted}: {e}", line) from None
    return dataclasses.replace(cfg, **{section: new_sub})


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigParseError(f"expected 'section.key = value', got {raw.strip()!r}", lineno)
        cfg = set_key(cfg, key.strip(), value.strip(), lineno)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def resolved_items(cfg: ExperimentConfig) -> dict:
    """Every ``section.key`` with its value, for provenance echoes."""
    out = {}
    for section in SECTIONS:
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            out[f"{section}.{f.name}"] = _format(getattr(sub, f.name))
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in resolved_items(cfg).items())
