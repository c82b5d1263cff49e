"""The main INI configuration file.

Sections (all optional, every key has a default)::

    [robot]       g W L1 L2 L3 m1 m2 m3
    [control]     kp kd epsilon u_max
    [simulation]  rtol atol event_tol max_steps step_horizon fall_height fall_roll_deg
    [optimizer]   criterion mu max_iter fd_step n_samples dtheta_min eq_tol ineq_tol
                  stability_constraint stability_delta time_limit
    [stability]   dq1_deg ddq1_degps ddtheta_degps beta_deg r
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import ControlGains
from .errors import ConfigError
from .optimizer import OptimizationProblem
from .params import RobotParams, load_params, read_config
from .simulator import SimConfig

_KNOWN = {
    "robot": None,  # validated by load_params
    "control": {"kp", "kd", "epsilon", "u_max"},
    "simulation": {"rtol", "atol", "event_tol", "max_steps", "step_horizon", "fall_height", "fall_roll_deg"},
    "optimizer": {"criterion", "mu", "max_iter", "fd_step", "n_samples", "dtheta_min", "eq_tol", "ineq_tol",
                  "stability_constraint", "stability_delta", "time_limit"},
    "stability": {"dq1_deg", "ddq1_degps", "ddtheta_degps", "beta_deg", "r"},
}


@dataclass(frozen=True)
class StabilitySettings:
    dq1_deg: float = 0.075
    ddq1_degps: float = 0.375
    ddtheta_degps: float = 0.375
    beta_deg: float = 0.075
    r: float = 2.0

    @property
    def perturbation(self) -> np.ndarray:
        return np.deg2rad([self.dq1_deg, self.ddq1_degps, self.ddtheta_degps])

    @property
    def beta_perturbation(self) -> float:
        return float(np.deg2rad(self.beta_deg))


@dataclass(frozen=True)
class Config:
    params: RobotParams = field(default_factory=RobotParams)
    gains: ControlGains = field(default_factory=ControlGains)
    sim: SimConfig = field(default_factory=SimConfig)
    problem: OptimizationProblem = field(default_factory=OptimizationProblem)
    stability: StabilitySettings = field(default_factory=StabilitySettings)
    path: str | None = None


def _num(section: str, key: str, raw: str, kind=float):
    try:
        if kind is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError
        v = kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from exc
    if kind is float and not math.isfinite(v):
        raise ConfigError(f"[{section}] {key} must be finite")
    return v


def load_config(path: str | Path | None = None) -> Config:
    """Parse and validate the config file; any problem raises :class:`ConfigError`."""
    cp = read_config(path)
    for sec in cp.sections():
        if sec not in _KNOWN:
            raise ConfigError(f"unknown config section [{sec}]")
        allowed = _KNOWN[sec]
        if allowed is not None:
            for k in cp[sec]:
                if k not in allowed:
                    raise ConfigError(f"unknown key {k!r} in [{sec}]")
    params = load_params(path)

    def get(sec, key, default, kind=float):
        if cp.has_option(sec, key):
            return _num(sec, key, cp.get(sec, key), kind)
        return default

    try:
        u_max = get("control", "u_max", None)
        gains = ControlGains.from_scalars(get("control", "kp", 1.0), get("control", "kd", 2.0),
                                          get("control", "epsilon", 0.05), u_max)
        sim = SimConfig(rtol=get("simulation", "rtol", 1e-10), atol=get("simulation", "atol", 1e-10),
                        event_tol=get("simulation", "event_tol", 1e-8),
                        max_steps=get("simulation", "max_steps", 200, int),
                        step_horizon=get("simulation", "step_horizon", 3.0),
                        fall_height=get("simulation", "fall_height", 0.3),
                        fall_roll=math.radians(get("simulation", "fall_roll_deg", 45.0)), gains=gains)
        criterion = cp.get("optimizer", "criterion", fallback="torque").strip().lower()
        problem = OptimizationProblem(
            criterion=criterion, mu=get("optimizer", "mu", 0.6), max_iter=get("optimizer", "max_iter", 100, int),
            fd_step=get("optimizer", "fd_step", 1e-6), n_samples=get("optimizer", "n_samples", 50, int),
            dtheta_min=get("optimizer", "dtheta_min", 0.05), eq_tol=get("optimizer", "eq_tol", 1e-5),
            ineq_tol=get("optimizer", "ineq_tol", 1e-6),
            stability_constraint=get("optimizer", "stability_constraint", False, bool),
            stability_delta=get("optimizer", "stability_delta", 0.05),
            time_limit=get("optimizer", "time_limit", None))
        stab = StabilitySettings(dq1_deg=get("stability", "dq1_deg", 0.075),
                                 ddq1_degps=get("stability", "ddq1_degps", 0.375),
                                 ddtheta_degps=get("stability", "ddtheta_degps", 0.375),
                                 beta_deg=get("stability", "beta_deg", 0.075), r=get("stability", "r", 2.0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if min(stab.perturbation) <= 0 or stab.beta_deg <= 0 or stab.r <= 0:
        raise ConfigError("[stability] perturbations and r must be positive")
    return Config(params=params, gains=gains, sim=sim, problem=problem, stability=stab,
                  path=None if path is None else str(path))
