"""Model self-checks: properties that hold for any physical parameter set."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import model
from .frames import Leg
from .impact import impact_map
from .model import RobotState
from .params import RobotParams


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28s} {self.value:.3e}  (tol {self.tol:.1e})"


NOMINAL_Q = np.array([-0.017, -0.34, 0.38, -0.29, 0.06, 0.05, -0.51, 0.17])


def random_states(n: int, rng: np.random.Generator, spread: float = 0.3, vel: float = 1.0):
    """Configurations around a walking posture and random velocities."""
    q = NOMINAL_Q + rng.uniform(-spread, spread, size=(n, 8))
    dq = rng.uniform(-vel, vel, size=(n, 8))
    return q, dq


def on_surface_states(n: int, params: RobotParams, rng: np.random.Generator, spread: float = 0.1):
    """Double-support configurations (z_sw = 0, x_sw > 0) with random velocities."""
    from .optimizer import FREE, close_chain
    from .errors import InvalidChain

    out = []
    while len(out) < n:
        p7 = NOMINAL_Q[list(FREE)] + rng.uniform(-spread, spread, 7)
        try:
            q = close_chain(p7, params, hint=NOMINAL_Q[1])
        except InvalidChain:
            continue
        out.append((q, rng.uniform(-1.0, 1.0, 8)))
    return out


def check_mass_matrix(params: RobotParams, n: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    sym, mineig = 0.0, np.inf
    for q in random_states(n, rng)[0]:
        for leg in Leg:
            D = model.mass_matrix(q, params, leg)
            sym = max(sym, np.max(np.abs(D - D.T)) / np.max(np.abs(D)))
            mineig = min(mineig, np.min(np.linalg.eigvalsh(0.5 * (D + D.T))))
    return [CheckResult("mass matrix symmetry", sym, 1e-12, sym < 1e-12),
            CheckResult("mass matrix min eigenvalue", mineig, 0.0, mineig > 0.0)]


def energy_drift(params: RobotParams, q0, dq0, t_end: float = 0.2, rtol: float = 1e-12, atol: float = 1e-12) -> float:
    """Relative total-energy change of the unactuated model over t_end."""
    u0 = np.zeros(6)

    def f(t, x):
        return np.concatenate([x[8:], model.forward_dynamics(x[:8], x[8:], u0, params)])

    sol = solve_ivp(f, (0.0, t_end), np.concatenate([q0, dq0]), method="DOP853", rtol=rtol, atol=atol)
    E0 = model.total_energy(q0, dq0, params)
    E1 = model.total_energy(sol.y[:8, -1], sol.y[8:, -1], params)
    return abs(E1 - E0) / abs(E0)


def check_energy(params: RobotParams, n: int = 3, seed: int = 1) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    qs, dqs = random_states(n, rng, spread=0.1, vel=0.5)
    drift = max(energy_drift(params, q, dq) for q, dq in zip(qs, dqs))
    return [CheckResult("passive energy drift (0.2 s)", drift, 1e-6, drift < 1e-6)]


def _fd_jacobian(fun, q, h=1e-6):
    return np.column_stack([(fun(q + e) - fun(q - e)) / (2 * h) for e in np.eye(q.size) * h])


def check_jacobians(params: RobotParams, n: int = 10, seed: int = 2) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    err = 0.0
    for q in random_states(n, rng)[0]:
        err = max(err, np.max(np.abs(model.swing_foot_jacobian(q, params)
                                     - _fd_jacobian(lambda z: model.swing_foot_position(z, params), q))))
        err = max(err, np.max(np.abs(model.com_jacobian(q, params)
                                     - _fd_jacobian(lambda z: model.center_of_mass(z, params), q))))
    return [CheckResult("kinematic Jacobians vs FD", err, 1e-6, err < 1e-6)]


def check_impact(params: RobotParams, n: int = 50, seed: int = 3) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst, post_speed = -np.inf, 0.0
    for q, dq in on_surface_states(n, params, rng):
        res = impact_map(RobotState(q, dq, Leg.LEG1), params)
        # kinetic energy of the extended (floating) model before and after
        qe = np.r_[q, 0.0, 0.0, 0.0, 0.0]
        De, Esw = (np.asarray(a) for a in model._extended(qe, model.param_vector(params)))
        dqe = np.r_[dq, np.zeros(4)]
        ke0 = 0.5 * dqe @ De @ dqe
        ke1 = 0.5 * res.dqe_plus @ De @ res.dqe_plus
        worst = max(worst, (ke1 - ke0) / max(ke0, 1e-12))
        vf = Esw @ res.dqe_plus
        post_speed = max(post_speed, float(np.max(np.abs(vf))))
    return [CheckResult("impact KE increase (rel.)", worst, 1e-12, worst <= 1e-12),
            CheckResult("post-impact foot velocity", post_speed, 1e-9, post_speed < 1e-9)]


def run_all(params: RobotParams) -> list[CheckResult]:
    out = []
    for fn in (check_mass_matrix, check_energy, check_jacobians, check_impact):
        out.extend(fn(params))
    return out
