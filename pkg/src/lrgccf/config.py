"""Flat ``key = value`` run configuration with defaults < file < flags precedence."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in ("on", "true", "yes", "1"):
        return True
    if s in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"expected on/off, got {value!r}")


def _int_list(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).replace(" ", "").split(",") if v)


@dataclass
class RunConfig:
    # data
    input: str | None = None
    format: str = "tsv"
    kcore: int = 10
    ratios: str = "0.8,0.1,0.1"
    # model
    k: int = 3
    dim: int = 64
    mode: str = "paper"
    residual: bool = True
    learn_transform: bool = False
    # training
    lr: float = 50.0
    reg: float = 0.01
    epochs: int = 400
    batch_size: int = 2048
    negatives: int = 1
    patience: int = 10
    eval_every: int = 5
    # eval / diagnostics
    split: str = "test"
    topn: tuple[int, ...] = (10, 20, 30, 40, 50)
    pairs: int = 100_000
    ks: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    # shared
    seed: int = 0
    threads: int | None = None
    data: str | None = None
    checkpoint: str | None = None
    out: str | None = None

    def ratio_tuple(self) -> tuple[float, float, float]:
        parts = [float(p) for p in self.ratios.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"ratios needs three values, got {self.ratios!r}")
        return parts[0], parts[1], parts[2]


# config-file key (mirrors the CLI flag) -> RunConfig field
KEY_ALIASES = {"lambda": "reg", "batch-size": "batch_size", "learn-transform": "learn_transform",
               "eval-every": "eval_every", "negatives-per-positive": "negatives"}
FIELD_TO_KEY = {v: k for k, v in KEY_ALIASES.items()}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value):
    kind = _TYPES[name]
    if value is None or value == "":
        return None if "None" in kind else value
    try:
        if kind.startswith("bool"):
            return _bool(value)
        if kind.startswith("tuple"):
            return _int_list(value)
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc
    return str(value)


def field_name(key: str) -> str:
    key = key.strip().lstrip("-")
    name = KEY_ALIASES.get(key, key.replace("-", "_"))
    if name not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    return name


def parse_config_text(text: str) -> dict:
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {line_no}: expected 'key = value'")
        name = field_name(key)
        values[name] = _coerce(name, value.strip())
    return values


def load_config_file(path: str | os.PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def resolve(file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    for source in (file_values or {}, flag_values or {}):
        for name, value in source.items():
            if value is not None:
                setattr(cfg, name, _coerce(name, value))
    return cfg


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def dump_config(cfg: RunConfig, command: str, keys: list[str] | None = None) -> str:
    lines = [f"# resolved configuration for `lrgccf {command}`"]
    for f in fields(cfg):
        if keys is not None and f.name not in keys:
            continue
        lines.append(f"{FIELD_TO_KEY.get(f.name, f.name.replace('_', '-'))} = {_render(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def write_config(path: str | os.PathLike, cfg: RunConfig, command: str, keys: list[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_config(cfg, command, keys))
