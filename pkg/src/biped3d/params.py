"""Physical parameters of the five-link biped and config-file loading."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class RobotParams:
    """Point-mass biped parameters in MKS units (defaults from the reference robot)."""

    g: float = 9.81
    W: float = 0.15
    L1: float = 0.275  # shin
    L2: float = 0.275  # thigh
    L3: float = 0.05  # hip midpoint -> torso mass
    m1: float = 0.875  # shin
    m2: float = 0.875  # thigh
    m3: float = 5.5  # torso

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v <= 0.0:
                raise ConfigError(f"robot parameter {f.name} must be strictly positive, got {v}")

    @property
    def total_mass(self) -> float:
        return 2 * self.m1 + 2 * self.m2 + self.m3

    def as_array(self) -> np.ndarray:
        return np.array([self.g, self.W, self.L1, self.L2, self.L3, self.m1, self.m2, self.m3])

    def with_(self, **kw) -> "RobotParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def read_config(path: str | Path | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
    return cp


def section_floats(cp: configparser.ConfigParser, section: str) -> dict[str, float]:
    if not cp.has_section(section):
        return {}
    out = {}
    for k, v in cp.items(section):
        try:
            out[k] = float(v)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {k} = {v!r} is not a number") from exc
    return out


def load_params(path: str | Path | None = None) -> RobotParams:
    """Load ``[robot]`` key = value pairs; missing keys keep their defaults.

    Keys are matched case-insensitively against the field names (``g, W, L1 ...``).
    """
    cp = read_config(path)
    vals = section_floats(cp, "robot")
    names = {f.name.lower(): f.name for f in fields(RobotParams)}
    kw = {}
    for k, v in vals.items():
        if k not in names:
            raise ConfigError(f"unknown robot parameter {k!r}")
        kw[names[k]] = v
    return RobotParams(**kw)
