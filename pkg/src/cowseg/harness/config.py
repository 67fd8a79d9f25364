"""Run configuration and its flat ``key = value`` text form.

Nested settings use dotted keys (``net.feature_dim = 32``); list values are
comma separated; ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..core import ConfigError
from ..data import FoldSpec, ShapeTaskConfig, make_fold
from ..losses import LossWeights
from ..nets import NetConfig, PrototypeCounts


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    lr_decay: float = 0.9
    decay_every: int = 500
    optimizer: str = "adam"
    momentum: float = 0.9  # sgd only
    weight_decay: float = 0.0
    iterations: int = 2000
    log_every: int = 1
    ckpt_every: int = 500
    seed: int = 0
    fold_id: int = 0
    episodes_per_class: int = 10
    counts: PrototypeCounts = field(default_factory=PrototypeCounts)
    weights: LossWeights = field(default_factory=LossWeights)
    net: NetConfig = field(default_factory=NetConfig)
    data: ShapeTaskConfig = field(default_factory=ShapeTaskConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        for name in ("decay_every", "log_every", "ckpt_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("momentum and weight_decay must be >= 0")
        make_fold(self.data, self.fold_id)

    @property
    def fold(self) -> FoldSpec:
        return make_fold(self.data, self.fold_id)

    def lr_at(self, iteration: int) -> float:
        """Learning rate for 1-based ``iteration``: decayed once per completed epoch."""
        return self.lr * self.lr_decay ** ((iteration - 1) // self.decay_every)

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed, net=replace(self.net, seed=seed))


_SECTIONS = {"counts": PrototypeCounts, "weights": LossWeights, "net": NetConfig, "data": ShapeTaskConfig}


def _coerce(raw: str, tp, key: str):
    try:
        origin = typing.get_origin(tp)
        if origin is tuple:
            elem = typing.get_args(tp)[0]
            return tuple(_coerce(x.strip(), elem, key) for x in raw.split(",") if x.strip())
        if tp is bool:
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        return tp(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None


def _hints(cls):
    return typing.get_type_hints(cls)


def parse_config_text(text: str) -> TrainConfig:
    top: dict[str, object] = {}
    nested: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    top_hints = _hints(TrainConfig)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.rpartition(".")
        if section:
            if section not in _SECTIONS or name not in _hints(_SECTIONS[section]):
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            nested[section][name] = _coerce(value, _hints(_SECTIONS[section])[name], key)
        else:
            if name not in top_hints or name in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            top[name] = _coerce(value, top_hints[name], key)
    for section, cls in _SECTIONS.items():
        try:
            top[section] = cls(**nested[section])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from exc
    try:
        return TrainConfig(**top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            lines += [f"{f.name}.{g.name} = {_fmt(getattr(v, g.name))}" for g in dataclasses.fields(v)]
        else:
            lines.append(f"{f.name} = {_fmt(v)}")
    return "\n".join(lines) + "\n"
