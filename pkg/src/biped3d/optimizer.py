"""Periodic gait search over the 15 final-state parameters.

Decision vector ``x = [q1, q3, q4, q5, q6, q7, q8, dq1, ..., dq8]`` at the
end of a step; q2 is solved so that the swing foot touches the ground.
A decision vector is decoded into a :class:`GaitDesign` by applying the
impact map (giving the start of the next step) and fitting the Bezier
constraint to both ends of the step.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, minimize

from . import hzd, model
from .constraints import GaitDesign, bezier_from_boundary, vc_arrays
from .errors import Biped3DError, EvaluationFailed, InvalidChain, NoConvergence
from .frames import Leg, Rz, dtheta_of, mirror, theta_of
from .impact import impact_canonical
from .params import RobotParams

log = logging.getLogger(__name__)

REPORT_SCHEMA = "biped3d.optimization/1"
FREE = (0, 2, 3, 4, 5, 6, 7)  # indices of q set directly by the decision vector
DEPENDENT = 1  # q2, solved from z_sw = 0
CRITERIA = ("torque", "stability")


# --------------------------------------------------------------------------
# decoding
# --------------------------------------------------------------------------

def split(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, float)
    if x.shape != (15,):
        raise ValueError("decision vector must have 15 entries")
    return x[:7], x[7:]


def encode(qf, dqf) -> np.ndarray:
    return np.concatenate([np.asarray(qf, float)[list(FREE)], np.asarray(dqf, float)])


def close_chain(p7, params: RobotParams, hint: float = -0.35, span=(-1.2, 0.6)) -> np.ndarray:
    """Full q_f from the seven free angles: q2 such that z_sw = 0 with x_sw > 0."""
    q = np.zeros(8)
    q[list(FREE)] = p7

    def z(a):
        q[DEPENDENT] = a
        return model.swing_foot_position(q, params)[2]

    grid = np.linspace(span[0], span[1], 73)
    vals = np.array([z(a) for a in grid])
    roots = []
    for k in np.where(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]:
        if vals[k] == vals[k + 1]:
            continue
        a = brentq(z, grid[k], grid[k + 1], xtol=1e-15, rtol=1e-15)
        q[DEPENDENT] = a
        if model.swing_foot_position(q, params)[0] > 0:
            roots.append(a)
    if not roots:
        raise InvalidChain("no q2 closes the chain with the swing foot ahead of the stance foot")
    q[DEPENDENT] = min(roots, key=lambda a: abs(a - hint))
    return q.copy()


@dataclass
class Decoded:
    qf: np.ndarray
    dqf: np.ndarray
    qi: np.ndarray
    dqi: np.ndarray
    q0_i: float
    design: GaitDesign
    impulse: np.ndarray


def decode(x, params: RobotParams, hint: float = -0.35, name: str = "") -> Decoded:
    """Build the gait implied by a decision vector."""
    p7, dqf = split(x)
    qf = close_chain(p7, params, hint)
    qi, dqi, res = impact_canonical(qf, dqf, params, check_surface=False)
    th_i, th_f = theta_of(qi), theta_of(qf)
    bez = bezier_from_boundary(qi[2:], dqi[2:], qf[2:], dqf[2:], th_i, th_f, dtheta_of(qi, dqi), dtheta_of(qf, dqf))
    q0_i = -0.5 * res.dq0  # symmetric stance yaw: no net heading change per step pair
    design = GaitDesign(alpha=bez.alpha, theta_i=th_i, theta_f=th_f, qf=qf, dqf=dqf, qi=qi, dqi=dqi, q0_i=q0_i,
                        name=name, meta={"decision_vector": np.asarray(x, float).tolist()})
    return Decoded(qf, dqf, qi, dqi, q0_i, design, np.asarray(res.impulse))


def mirror_decision(x) -> np.ndarray:
    """Decision vector of the left/right mirrored gait."""
    p7, dqf = split(x)
    q = np.zeros(8)
    q[list(FREE)] = p7
    return encode(mirror(q), mirror(dqf))


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizationProblem:
    criterion: str = "torque"
    mu: float = 0.6
    lower: tuple | None = None
    upper: tuple | None = None
    eq_tol: float = 1e-5
    ineq_tol: float = 1e-6
    max_iter: int = 100
    fd_step: float = 1e-6
    n_samples: int = 50
    dtheta_min: float = 0.05
    stability_constraint: bool = False  # spectral radius <= 1 - delta while minimizing torque
    stability_delta: float = 0.05
    chart_hint: float = -0.35
    time_limit: float | None = None  # seconds
    trust_radius: float = 0.02  # initial box half-width on angles [rad]
    velocity_scale: float = 5.0  # box half-width on velocities relative to angles
    inner_iter: int = 4
    ftol: float = 1e-9
    restore: bool = True  # project each candidate back onto the periodic orbits

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")

    def bounds(self) -> list[tuple[float, float]]:
        lo = np.r_[np.full(7, -1.5), np.full(8, -8.0)] if self.lower is None else np.asarray(self.lower, float)
        hi = np.r_[np.full(7, 1.5), np.full(8, 8.0)] if self.upper is None else np.asarray(self.upper, float)
        return list(zip(lo, hi))


@dataclass
class Evaluation:
    J: float
    eq: np.ndarray
    margins: dict
    T: float
    L: float
    width: float
    torque_cost: float
    spectral_radius: float | None
    design: GaitDesign

    @property
    def ineq(self) -> np.ndarray:
        return np.concatenate([self.margins[k] for k in ("dtheta", "z_sw", "Fz", "friction", "stability")
                               if k in self.margins])

    @property
    def speed(self) -> float:
        return self.L / self.T

    def feasible(self, eq_tol=1e-5, ineq_tol=1e-6) -> bool:
        return bool(np.max(np.abs(self.eq)) < eq_tol and np.min(self.ineq) >= -ineq_tol)

    def summary(self) -> dict:
        return {"J": self.J, "eq_residuals": self.eq.tolist(),
                "min_margins": {k: float(np.min(v)) for k, v in self.margins.items()},
                "T": self.T, "L": self.L, "width": self.width, "speed": self.speed,
                "torque_cost": self.torque_cost, "spectral_radius": self.spectral_radius}


def step_metrics(design: GaitDesign, params: RobotParams) -> tuple[float, float]:
    """(step length, step width) from the stance foot to the landing swing foot."""
    d = Rz(design.q0_i) @ model.swing_foot_position(design.qf, params)
    return float(d[0]), float(abs(d[1]))


def sample_step(traj: hzd.ZdTrajectory, design: GaitDesign, n: int) -> dict:
    """Signals at n uniform phase values over [theta_i, theta_f]."""
    th_end = traj.x_end[1]
    ts = []
    for v in np.linspace(design.theta_i, min(design.theta_f, th_end), n):
        if v <= design.theta_i:
            ts.append(0.0)
        elif v >= th_end:
            ts.append(traj.T)
        else:
            ts.append(brentq(lambda s: traj.sol.sol(s)[1] - v, 0.0, traj.T, xtol=1e-13))
    return traj.signals(np.array(ts))


def evaluate(x, problem: OptimizationProblem, params: RobotParams, with_design: bool = True) -> Evaluation:
    """Criterion, periodicity residuals and sampled feasibility margins for x."""
    try:
        dec = decode(x, params, problem.chart_hint)
    except Biped3DError as e:
        raise EvaluationFailed("decode", str(e)) from e
    d = dec.design
    x0 = np.array([d.qi[0], d.theta_i, d.dqi[0], d.dtheta_i])
    try:
        traj = hzd.integrate_zero_dynamics(x0, d, params, stop="theta_f", dense=True)
        sig = sample_step(traj, d, problem.n_samples)
    except Biped3DError as e:
        raise EvaluationFailed("integrate", str(e)) from e
    xe = traj.x_end
    eq = np.array([xe[0] - d.qf[0], xe[2] - d.dqf[0], xe[3] - d.dtheta_f])
    F = sig["F"]
    margins = {
        "dtheta": -sig["dq"][:, 1] - 0.5 * sig["dq"][:, 2] - problem.dtheta_min,
        "z_sw": sig["foot"][1:-1, 2],  # both ends are on the ground by construction
        "Fz": F[:, 2],
        "friction": problem.mu * F[:, 2] - np.hypot(F[:, 0], F[:, 1]),
    }
    L, width = step_metrics(d, params)
    if L <= 0:
        raise EvaluationFailed("decode", "step length is not positive")
    torque = traj.cost / L
    rho = None
    if problem.criterion == "stability" or problem.stability_constraint:
        try:
            rho = hzd.linearize(d, params, warn=False).spectral_radius
        except Biped3DError as e:
            raise EvaluationFailed("stability", str(e)) from e
        if problem.stability_constraint:
            margins["stability"] = np.array([1.0 - problem.stability_delta - rho])
    J = rho if problem.criterion == "stability" else torque
    d.meta.update({"T": traj.T, "L": L, "width": width, "torque_cost": torque})
    return Evaluation(J=float(J), eq=eq, margins=margins, T=float(traj.T), L=L, width=width,
                      torque_cost=float(torque), spectral_radius=rho, design=d)


# --------------------------------------------------------------------------
# periodicity correction and optimization
# --------------------------------------------------------------------------

def periodicity_residual(x, params: RobotParams, hint: float = -0.35) -> np.ndarray:
    dec = decode(x, params, hint)
    d = dec.design
    x0 = np.array([d.qi[0], d.theta_i, d.dqi[0], d.dtheta_i])
    xe = hzd.integrate_zero_dynamics(x0, d, params, stop="theta_f").x_end
    return np.array([xe[0] - d.qf[0], xe[2] - d.dqf[0], xe[3] - d.dtheta_f])


def make_periodic(x, params: RobotParams, tol: float = 1e-11, max_iter: int = 8, hint: float = -0.35,
                  h: float = 1e-6) -> np.ndarray:
    """Smallest change of x (Gauss-Newton, minimum norm) that closes the orbit."""
    x = np.asarray(x, float).copy()
    r = periodicity_residual(x, params, hint)
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            break
        J = np.column_stack([(periodicity_residual(x + e, params, hint) - periodicity_residual(x - e, params, hint))
                             / (2 * h) for e in np.eye(15) * h])
        x = x - np.linalg.pinv(J) @ r
        r = periodicity_residual(x, params, hint)
    if np.max(np.abs(r)) >= max(tol, 1e-9):
        raise NoConvergence(f"periodicity residual {np.max(np.abs(r)):.2e} after {max_iter} iterations", x)
    return x


class _Cache:
    """Memoizes evaluations so objective and constraints share integrations."""

    def __init__(self, problem, params):
        self.problem, self.params = problem, params
        self.store: dict[bytes, Evaluation | None] = {}
        self.n_eval = 0
        self.best: tuple[float, np.ndarray] | None = None

    def __call__(self, x) -> Evaluation | None:
        key = np.asarray(x, float).tobytes()
        if key not in self.store:
            self.n_eval += 1
            try:
                ev = evaluate(x, self.problem, self.params)
            except EvaluationFailed as e:
                log.debug("evaluation failed (%s): %s", e.phase, e)
                ev = None
            if len(self.store) > 4096:
                self.store.clear()
            self.store[key] = ev
            if ev is not None and ev.feasible(self.problem.eq_tol, self.problem.ineq_tol):
                if self.best is None or ev.J < self.best[0]:
                    self.best = (ev.J, np.asarray(x, float).copy())
        return self.store[key]


_PENALTY = 1e3


def _fd_jac(fun, x, h_rel):
    f0 = fun(x)
    J = np.empty((np.size(f0), x.size))
    for i in range(x.size):
        h = h_rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (fun(x + e) - f0) / h
    return J


def _restore(x, problem, params, lo, hi):
    """Project a candidate back onto the periodic-orbit manifold (minimum-norm)."""
    try:
        xr = make_periodic(x, params, tol=0.1 * problem.eq_tol, max_iter=3, hint=problem.chart_hint)
    except NoConvergence as e:
        xr = e.best
    except Biped3DError:
        return x
    if xr is None or not np.all(np.isfinite(xr)):
        return x
    return np.clip(xr, lo, hi)


def _merit(ev: Evaluation | None, weight: float) -> float:
    if ev is None:
        return np.inf
    return ev.J + weight * (np.sum(np.abs(ev.eq)) + np.sum(np.maximum(0.0, -ev.ineq)))


def optimize(x0, problem: OptimizationProblem, params: RobotParams, callback=None):
    """Local constrained optimization: SLSQP with forward-difference gradients,
    run inside a trust-region box that is grown or shrunk on an l1 merit.

    Returns ``(x, evaluation, report)``.  Raises :class:`NoConvergence` with the
    best feasible iterate if no feasible point is found.
    """
    cache = _Cache(problem, params)
    x = np.asarray(x0, float).copy()
    ev0 = cache(x)
    if ev0 is None:
        raise EvaluationFailed("decode", "initial guess cannot be evaluated")
    n_ineq = ev0.ineq.size
    weight = 100.0 * max(1.0, abs(ev0.J))
    lo_g, hi_g = np.array(problem.bounds()).T
    scale = np.r_[np.ones(7), np.full(8, problem.velocity_scale)]
    radius = problem.trust_radius
    history = []
    t_start = time.time()

    def J(z):
        ev = cache(z)
        return _PENALTY if ev is None else ev.J

    def eq(z):
        ev = cache(z)
        return np.full(3, _PENALTY) if ev is None else ev.eq

    def ineq(z):
        ev = cache(z)
        return np.full(n_ineq, -_PENALTY) if ev is None else ev.ineq

    def jac(fun):
        return lambda z: _fd_jac(fun, np.asarray(z, float), problem.fd_step)

    cons = [{"type": "eq", "fun": eq, "jac": jac(eq)}, {"type": "ineq", "fun": ineq, "jac": jac(ineq)}]
    grad = jac(lambda z: np.atleast_1d(J(z)))
    phi = _merit(ev0, weight)
    status, message = 1, "iteration limit reached"
    for it in range(problem.max_iter):
        if problem.time_limit is not None and time.time() - t_start > problem.time_limit:
            status, message = 9, "time limit reached"
            break
        box = list(zip(np.maximum(lo_g, x - radius * scale), np.minimum(hi_g, x + radius * scale)))
        res = minimize(J, x, jac=lambda z: grad(z)[0], method="SLSQP", bounds=box, constraints=cons,
                       options={"maxiter": problem.inner_iter, "ftol": 1e-12})
        cand = np.clip(res.x, lo_g, hi_g)
        if problem.restore:
            cand = _restore(cand, problem, params, lo_g, hi_g)
        ev_c = cache(cand)
        phi_c = _merit(ev_c, weight)
        accepted = phi_c < phi - 1e-12 * (1.0 + abs(phi))
        step = float(np.max(np.abs((cand - x) / scale)))
        if accepted:
            dphi = phi - phi_c
            x, phi = cand, phi_c
            if step > 0.5 * radius:
                radius = min(2.0 * radius, problem.trust_radius * 10)
        else:
            dphi = 0.0
            radius *= 0.5
        ev = cache(x)
        rec = {"iter": it, "J": ev.J, "merit": phi, "eq": float(np.max(np.abs(ev.eq))),
               "min_margin": float(np.min(ev.ineq)), "radius": radius, "accepted": bool(accepted),
               "time": time.time() - t_start}
        history.append(rec)
        log.info("iter %(iter)d J=%(J).6g eq=%(eq).2e margin=%(min_margin).3g radius=%(radius).3g", rec)
        if callback is not None:
            callback(x, ev)
        feasible = ev.feasible(problem.eq_tol, problem.ineq_tol)
        if feasible and accepted and dphi <= problem.ftol * (1.0 + abs(phi)):
            status, message = 0, "converged"
            break
        if radius < 1e-7:
            status, message = 0 if feasible else 2, "trust region collapsed"
            break
    ev = cache(x)
    ok = ev is not None and ev.feasible(problem.eq_tol, problem.ineq_tol)
    if not ok and cache.best is not None:
        x = cache.best[1]
        ev = cache(x)
        ok = True
    report = {
        "schema": REPORT_SCHEMA,
        "criterion": problem.criterion,
        "problem": {k: v for k, v in asdict(problem).items() if k not in ("lower", "upper")},
        "solver": {"method": "SLSQP in trust region", "status": int(status), "message": message,
                   "iterations": len(history), "evaluations": cache.n_eval, "wall_time": time.time() - t_start},
        "initial": ev0.summary(),
        "final": None if ev is None else ev.summary(),
        "x0": np.asarray(x0, float).tolist(),
        "x": np.asarray(x).tolist(),
        "history": history,
    }
    if not ok:
        raise NoConvergence(f"no feasible point found ({message})", None if cache.best is None else cache.best[1])
    ev.design.meta.update({"criterion": problem.criterion, "J": ev.J})
    return np.asarray(x), ev, report


def save_report(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2))
    return path
