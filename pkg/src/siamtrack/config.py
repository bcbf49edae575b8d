"""Flat ``key = value`` configuration.

Values are typed by the key's default: integers, floats, booleans
(``true``/``false``), strings (bare or double-quoted) and integer tuples
written as ``32, 64, 128``. ``#`` starts a comment. Unknown keys are an
error listing every offending key.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # sampling
    n_template: int = 512
    n_search: int = 1024
    margin: float = 2.0
    # backbone
    channels: tuple = (32, 64, 128)
    out_channels: int = 32
    neighbors: tuple = (32, 48, 48)
    heads: int = 2
    layer_norm: bool = True
    # correlation
    knn_k: int = 48
    iterations: int = 2
    ego_aug: bool = True
    fusion: str = "attention"
    # head
    grid_x: float = 5.6
    grid_y: float = 3.6
    grid_cell: float = 0.3
    head_channels: int = 32
    # numerics
    dtype: str = "float64"
    seed: int = 0
    # training
    optimizer: str = "adam"
    lr: float = 1e-3
    steps: int = 2000
    batch_size: int = 1
    jitter_xy: float = 0.3
    jitter_yaw_deg: float = 5.0
    w_heatmap: float = 1.0
    w_offset: float = 1.0
    w_z: float = 1.0
    w_yaw: float = 1.0
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    log_every: int = 50
    category: str = "Car"

    def replace(self, **changes) -> "Config":
        unknown = sorted(set(changes) - {f.name for f in fields(self)})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, base: "Config | None" = None) -> "Config":
        base = base or cls()
        types = {f.name: type(getattr(base, f.name)) for f in fields(base)}
        values: dict = {}
        unknown: list[str] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                unknown.append(key)
                continue
            try:
                values[key] = _parse(val, types[key])
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return dataclasses.replace(base, **values)

    @classmethod
    def load(cls, path: str | Path, base: "Config | None" = None) -> "Config":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            return cls.from_text(p.read_text(), base)
        except ConfigError as exc:
            raise ConfigError(f"{p}: {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, str):
        return f'"{v}"'
    return repr(v)


def _parse(text: str, kind: type):
    if kind is bool:
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return low == "true"
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is tuple:
        return tuple(int(x) for x in text.strip("()[] ").split(",") if x.strip())
    if len(text) >= 2 and text[0] == text[-1] == '"':
        return text[1:-1]
    return text


TOY = Config(
    n_template=128, n_search=256, neighbors=(16, 16, 16), knn_k=16,
)
