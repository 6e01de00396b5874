"""Flat ``section.key = value`` run configuration.

One assignment per line; ``#`` starts a comment; blank lines are ignored.
Tuples are comma separated and nested tuples (per-class rhythm lists) use
``;`` between groups, e.g. ``synth.rhythms = 8,10;20,24``. Booleans are
``true``/``false``. Unknown sections or keys are rejected and every error
names the offending line.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class FrontendSection:
    features: int = 60
    kernel: int = 32
    windows: int = 4
    ridge_scale: float = 1e-5
    ridge_floor: float = 1e-10
    order: int = 5
    low_band: tuple[float, ...] = (4.0, 17.0)
    high_band: tuple[float, ...] = (13.0, 40.0)
    causal: bool = False
    precision: str = "float32"


@dataclass(frozen=True)
class PoolingSection:
    strategy: str = "em"


@dataclass(frozen=True)
class SpdnetSection:
    dims: tuple[int, ...] = (60, 30, 15)
    reeig_eps: float = 1e-4


@dataclass(frozen=True)
class OptimSection:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainSection:
    max_epochs: int = 1500
    patience: int = 150
    batch_size: int = 32
    seed: int = 0
    workers: int = 1
    early_stop: str = "train_loss"


@dataclass(frozen=True)
class DataSection:
    fs_target: float = 250.0
    band: tuple[float, ...] = (4.0, 40.0)
    order: int = 5
    normalize: bool = False


@dataclass(frozen=True)
class SynthSection:
    n_classes: int = 2
    trials_per_class: int = 100
    test_trials_per_class: int = 100
    channels: int = 22
    samples: int = 1000
    fs: float = 250.0
    rhythms: tuple[tuple[float, ...], ...] = ((10.0,), (24.0,))
    noise_slope: float = 1.0
    snr_db: float = 40.0
    seed: int = 0
    mixing_seed: int = 1


@dataclass(frozen=True)
class RunConfig:
    frontend: FrontendSection = field(default_factory=FrontendSection)
    pooling: PoolingSection = field(default_factory=PoolingSection)
    spdnet: SpdnetSection = field(default_factory=SpdnetSection)
    optim: OptimSection = field(default_factory=OptimSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    synth: SynthSection = field(default_factory=SynthSection)

    def replace(self, **updates) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"train.workers": 4})``."""
        sections = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, value in updates.items():
            sec, _, name = key.partition(".")
            if sec not in sections or name not in _field_types(type(sections[sec])):
                raise ConfigError(f"unknown key {key!r}")
            sections[sec] = dataclasses.replace(sections[sec], **{name: value})
        return RunConfig(**sections)


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


def _parse_scalar(kind, text: str):
    if kind is bool:
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true or false, got {text!r}")
        return low == "true"
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def _parse_value(tp, text: str):
    if typing.get_origin(tp) is tuple:
        inner = typing.get_args(tp)[0]
        if typing.get_origin(inner) is tuple:
            return tuple(_parse_value(inner, g) for g in text.split(";"))
        parts = [p.strip() for p in text.split(",")]
        if any(p == "" for p in parts):
            raise ValueError(f"empty element in list {text!r}")
        return tuple(_parse_scalar(inner, p) for p in parts)
    return _parse_scalar(tp, text)


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        sep = ";" if value and isinstance(value[0], tuple) else ","
        return sep.join(_render_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse(text: str) -> RunConfig:
    """Parse a config document; unspecified keys keep their defaults."""
    sections = {f.name: {} for f in fields(RunConfig)}
    types = {f.name: _field_types(f.default_factory) for f in fields(RunConfig)}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        sec, dot, name = key.partition(".")
        if not dot or sec not in sections:
            raise ConfigError(f"line {lineno}: unknown section in key {key!r}")
        if name not in types[sec]:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        if value == "":
            raise ConfigError(f"line {lineno}: missing value for {key!r}")
        try:
            sections[sec][name] = _parse_value(types[sec][name], value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        seen[key] = lineno
    return RunConfig(**{f.name: f.default_factory(**sections[f.name]) for f in fields(RunConfig)})


def render(cfg: RunConfig) -> str:
    """Inverse of :func:`parse`: every key written explicitly, floats via ``repr``."""
    lines = []
    for sec in fields(cfg):
        section = getattr(cfg, sec.name)
        for f in fields(section):
            lines.append(f"{sec.name}.{f.name} = {_render_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse(text)
