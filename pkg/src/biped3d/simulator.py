"""Closed-loop simulation of the full hybrid model over many steps.

Every step is integrated in the leg-1 chart; after each impact the state is
mirrored back (as in the reduced analysis) and a :class:`Pose` keeps track of
where the chart sits in the world: stance foot position, the sign of the
chart's lateral axis, and the stance-shin yaw.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from . import model
from .constraints import EventTerm, GaitDesign, StrideCorrection, event_term_coeffs, output, stride_correction_for, vc_arrays
from .controller import ControlGains, _check, _closed_loop_rhs, _control
from .errors import Biped3DError, FallDetected, IntegratorFailure, NoImpact
from .frames import Leg, Rz, dtheta_of, theta_of
from .hzd import event_policy
from .impact import impact_canonical
from .params import RobotParams

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = "biped3d.run/1"
CONTROLLERS = ("fixed", "hzd", "hzd+dlqr", "reselected")


@dataclass(frozen=True)
class SimConfig:
    rtol: float = 1e-10
    atol: float = 1e-10
    event_tol: float = 1e-8  # |z_sw| accepted at a located impact [m]
    max_steps: int = 200
    step_horizon: float = 3.0  # longest allowed step [s]
    gains: ControlGains = field(default_factory=ControlGains)
    min_progress: float = 0.02  # fraction of the theta range before impacts count
    fall_height: float = 0.3  # torso height below which the robot has fallen [m]
    fall_roll: float = math.pi / 4
    samples_per_step: int = 0  # 0: record at the integrator's own steps

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.event_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.step_horizon <= 0 or self.max_steps < 1:
            raise ValueError("step_horizon and max_steps must be positive")


# --------------------------------------------------------------------------
# controllers
# --------------------------------------------------------------------------

class Controller:
    """Within-step feedback plus what happens at the start of each step."""

    name = "base"

    def __init__(self, design: GaitDesign):
        self.design = design

    def begin_step(self, q, dq, xz_pre) -> tuple[StrideCorrection | None, EventTerm | None]:
        return None, None


class FixedVC(Controller):
    """Nominal virtual constraints only; transients are left to the PD loop."""

    name = "fixed"


class HZDCorrected(Controller):
    """Adds the stride correction so the outputs start every step at zero."""

    name = "hzd"

    def begin_step(self, q, dq, xz_pre):
        return stride_correction_for(q, dq, self.design), None


class EventDLQR(HZDCorrected):
    """HZD correction plus beta = -K (x^z - x^z*) chosen at every impact."""

    name = "hzd+dlqr"

    def __init__(self, design: GaitDesign, K=None, x_star=None):
        super().__init__(design)
        K = design.K if K is None else K
        if K is None:
            raise ValueError("event control needs a gain K (run dlqr first)")
        self.K = np.asarray(K, float)
        self.x_star = design.xz_star if x_star is None else np.asarray(x_star, float)

    def begin_step(self, q, dq, xz_pre):
        corr, _ = super().begin_step(q, dq, xz_pre)
        if xz_pre is None:
            return corr, None
        beta = event_policy(xz_pre, self.x_star, self.K)
        return corr, event_term_coeffs(beta, theta_of(q), self.design.theta_f)


class ReselectedOutput(HZDCorrected):
    """HZD correction with a non-default output selection (e.g. the frontal CoM output)."""

    name = "reselected"

    def __init__(self, design: GaitDesign):
        if design.is_default_selection:
            raise ValueError("reselected controller needs a gait with a non-default output matrix")
        super().__init__(design)


def make_controller(kind: str, design: GaitDesign, K=None) -> Controller:
    kind = kind.lower()
    if kind == "fixed":
        return FixedVC(design)
    if kind == "hzd":
        return HZDCorrected(design)
    if kind == "hzd+dlqr":
        return EventDLQR(design, K)
    if kind == "reselected":
        return ReselectedOutput(design)
    raise ValueError(f"unknown controller {kind!r}; choose from {CONTROLLERS}")


# --------------------------------------------------------------------------
# records
# --------------------------------------------------------------------------

@dataclass
class Pose:
    """World placement of the leg-1 chart: world = p + S Rz(q0) r, S = diag(1, s, 1)."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    s: float = 1.0
    q0: float = 0.0

    def to_world(self, r) -> np.ndarray:
        r = Rz(self.q0) @ np.asarray(r, float)
        return self.p + np.array([r[0], self.s * r[1], r[2]])

    @property
    def yaw(self) -> float:
        return self.s * self.q0

    @property
    def stance_leg(self) -> Leg:
        return Leg.LEG1 if self.s > 0 else Leg.LEG2


@dataclass
class StepRecord:
    index: int
    stance_leg: Leg
    t0: float  # global time at step start
    t: np.ndarray  # local time
    q: np.ndarray
    dq: np.ndarray
    u: np.ndarray
    F: np.ndarray
    z_sw: np.ndarray
    theta: np.ndarray
    end: np.ndarray  # (q1, theta, dq1, dtheta) just before impact
    T: float
    L: float
    width: float
    yaw: float
    y_start: float  # |y| at step start
    beta: np.ndarray | None = None
    impulse: np.ndarray | None = None

    @property
    def xz(self) -> np.ndarray:
        return np.array([self.end[0], self.end[2], self.end[3]])

    @property
    def speed(self) -> float:
        return self.L / self.T

    def summary(self) -> dict:
        return {"step": self.index, "stance_leg": int(self.stance_leg), "t0": self.t0, "T": self.T,
                "L": self.L, "width": self.width, "speed": self.speed, "yaw": self.yaw,
                "end": {"q1": self.end[0], "theta": self.end[1], "dq1": self.end[2], "dtheta": self.end[3]},
                "y_start": self.y_start, "max_abs_u": float(np.max(np.abs(self.u))),
                "min_Fz": float(np.min(self.F[:, 2])),
                "beta": None if self.beta is None else self.beta.tolist()}


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------

def _torso_height(q, params) -> float:
    return float(model.joint_positions(q, params)["torso"][2])


def simulate_step(q, dq, controller: Controller, params: RobotParams, config: SimConfig = SimConfig(),
                  pose: Pose | None = None, xz_pre=None, index: int = 0, t0: float = 0.0):
    """Flow one single-support phase to the next impact and apply the impact map.

    Returns ``(record, q_plus, dq_plus, pose_plus)`` with the post-impact state
    already mirrored into the leg-1 chart.
    """
    pose = pose or Pose(q0=controller.design.q0_i)
    design = controller.design
    q, dq = np.asarray(q, float), np.asarray(dq, float)
    corr, ev = controller.begin_step(q, dq, xz_pre)
    vc = vc_arrays(design, corr, ev)
    p = model.param_vector(params, Leg.LEG1)
    g = config.gains
    umax = -1.0 if g.u_max is None else float(g.u_max)
    Kp, Kd, eps = g.Kp, g.Kd, float(g.epsilon)
    y0 = np.linalg.norm(output(q, dq, design, corr, ev)[0])

    th_start = theta_of(q)
    span = design.theta_f - design.theta_i

    def f(t, x):
        return np.asarray(_closed_loop_rhs(x, vc, p, Kp, Kd, eps, umax))

    def ev_impact(t, x):
        return float(model.swing_foot_position(x[:8], params)[2])

    def ev_torso(t, x):
        return _torso_height(x[:8], params) - config.fall_height

    def ev_roll(t, x):
        return config.fall_roll - abs(x[0])

    ev_impact.terminal, ev_impact.direction = True, -1
    ev_torso.terminal, ev_torso.direction = True, -1
    ev_roll.terminal, ev_roll.direction = True, -1

    x0 = np.concatenate([q, dq])
    ta, ts, xs = 0.0, [], []
    while True:
        try:
            sol = solve_ivp(f, (ta, config.step_horizon), x0, method="DOP853", rtol=config.rtol, atol=config.atol,
                            events=[ev_impact, ev_torso, ev_roll], dense_output=True)
        except (ValueError, np.linalg.LinAlgError) as e:
            raise IntegratorFailure(f"step {index}: {e}") from e
        if sol.status == -1:
            raise IntegratorFailure(f"step {index}: {sol.message}")
        ts.append(sol.t)
        xs.append(sol.y.T)
        if sol.status == 0:
            raise NoImpact(f"step {index}: no impact within {config.step_horizon} s")
        if sol.t_events[1].size or sol.t_events[2].size:
            raise FallDetected(f"step {index}: fall detected at t = {sol.t[-1]:.3f} s")
        te, xe = sol.t_events[0][0], sol.y_events[0][0]
        foot = model.swing_foot_position(xe[:8], params)
        dfoot = model.swing_foot_velocity(xe[:8], xe[8:], params)
        progress = (theta_of(xe[:8]) - th_start) / span
        if foot[0] <= 0.0 or progress < config.min_progress or dfoot[2] >= 0.0:
            # scuff behind the stance foot or trivial contact right after impact
            ta = te + 1e-9
            x0 = sol.sol(ta)
            continue
        break
    # polish the event on the dense interpolant
    for _ in range(5):
        z = model.swing_foot_position(xe[:8], params)[2]
        if abs(z) < 1e-12:
            break
        zdot = model.swing_foot_velocity(xe[:8], xe[8:], params)[2]
        te = te - z / zdot
        xe = sol.sol(te)
    z = model.swing_foot_position(xe[:8], params)[2]
    if abs(z) > config.event_tol:
        raise IntegratorFailure(f"step {index}: impact located with |z_sw| = {abs(z):.2e}")

    t = np.concatenate(ts)
    X = np.concatenate(xs)
    keep = t < te
    t = np.append(t[keep], te)
    X = np.vstack([X[keep], xe])
    if config.samples_per_step:
        t = np.linspace(0.0, te, config.samples_per_step)
        X = np.array([_dense(sol, ts, xs, tt, x0_first=np.concatenate([q, dq])) for tt in t])
        X[-1] = xe
    qs, dqs = X[:, :8], X[:, 8:]
    us, Fs, zs = [], [], []
    for qk, dqk in zip(qs, dqs):
        u, _, _, _, A = _control(qk, dqk, vc, p, Kp, Kd, eps)
        u = np.asarray(u)
        if g.u_max is not None:
            u = np.clip(u, -g.u_max, g.u_max)
        ddq = model.forward_dynamics(qk, dqk, u, params)
        us.append(u)
        Fs.append(model.ground_reaction(qk, dqk, ddq, params))
        zs.append(model.swing_foot_position(qk, params)[2])
    _check(A)
    th = -qs[:, 1] - 0.5 * qs[:, 2]

    qm, dqm = xe[:8], xe[8:]
    foot_w = pose.to_world(model.swing_foot_position(qm, params))
    qp, dqp, res = impact_canonical(qm, dqm, params, q0=pose.q0, surface_tol=max(config.event_tol, 1e-6))
    q0_new = -(pose.q0 + res.dq0)
    pose_new = Pose(p=foot_w, s=-pose.s, q0=q0_new)
    d = foot_w - pose.p
    rec = StepRecord(index=index, stance_leg=pose.stance_leg, t0=t0, t=t, q=qs, dq=dqs, u=np.array(us),
                     F=np.array(Fs), z_sw=np.array(zs), theta=th,
                     end=np.array([qm[0], theta_of(qm), dqm[0], dtheta_of(qm, dqm)]), T=float(te),
                     L=float(d[0]), width=float(abs(d[1])), yaw=pose_new.yaw - pose.yaw, y_start=float(y0),
                     beta=None if ev is None else np.asarray(ev.beta), impulse=np.asarray(res.impulse))
    return rec, qp, dqp, pose_new


def _dense(sol, ts, xs, tt, x0_first):
    # only the last solve_ivp segment has a dense interpolant here; earlier
    # segments (skipped scuffs) are rare, fall back to nearest stored sample
    if tt >= sol.t[0]:
        return sol.sol(tt)
    t = np.concatenate(ts)
    X = np.concatenate(xs)
    return X[np.argmin(np.abs(t - tt))]


def perturbed_start(design: GaitDesign, perturb_pos_deg: float = 0.0, perturb_vel_degps: float = 0.0):
    """Nominal post-impact state with every joint offset by the given amounts."""
    q = design.qi + np.deg2rad(perturb_pos_deg)
    dq = design.dqi + np.deg2rad(perturb_vel_degps)
    return q, dq


def simulate_walk(q, dq, controller: Controller, n_steps: int, params: RobotParams,
                  config: SimConfig = SimConfig(), pose: Pose | None = None) -> list[StepRecord]:
    """Chain ``n_steps`` steps; the event policy sees the previous pre-impact state."""
    if n_steps > config.max_steps:
        raise ValueError(f"n_steps {n_steps} exceeds max_steps {config.max_steps}")
    pose = pose or Pose(q0=controller.design.q0_i)
    records: list[StepRecord] = []
    xz, t0 = None, 0.0
    for k in range(n_steps):
        try:
            rec, q, dq, pose = simulate_step(q, dq, controller, params, config, pose, xz, k, t0)
        except Biped3DError as e:
            e.step = k
            e.records = records
            raise
        records.append(rec)
        xz = rec.xz
        t0 += rec.T
    return records


def zd_errors(records: list[StepRecord], x_star) -> np.ndarray:
    """End-of-step ||x^z_k - x^z*|| for each record."""
    return np.array([np.linalg.norm(r.xz - np.asarray(x_star)) for r in records])


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

_Q = [f"q{i}" for i in range(1, 9)]
CSV_COLUMNS = {
    "positions": ["step", "stance_leg", "t", *_Q, "theta"],
    "velocities": ["step", "stance_leg", "t", *[f"d{c}" for c in _Q]],
    "torques": ["step", "stance_leg", "t", *[f"u{i}" for i in range(3, 9)]],
    "forces": ["step", "stance_leg", "t", "F1", "F2", "F3", "z_sw"],
    "poincare": ["step", "q1", "theta", "dq1", "dtheta", "T", "L", "width", "yaw"],
}


def export_records(records: list[StepRecord], out_dir, extra: dict | None = None) -> dict[str, Path]:
    """Write one CSV per signal group plus a JSON run summary; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    rows = {k: [] for k in CSV_COLUMNS}
    for r in records:
        tg = r.t0 + r.t
        for j in range(r.t.size):
            head = [r.index, int(r.stance_leg), tg[j]]
            rows["positions"].append(head + list(r.q[j]) + [r.theta[j]])
            rows["velocities"].append(head + list(r.dq[j]))
            rows["torques"].append(head + list(r.u[j]))
            rows["forces"].append(head + list(r.F[j]) + [r.z_sw[j]])
        rows["poincare"].append([r.index, *r.end, r.T, r.L, r.width, r.yaw])
    for k, cols in CSV_COLUMNS.items():
        p = out / f"{k}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            w.writerows(rows[k])
        paths[k] = p
    summary = {"schema": SUMMARY_SCHEMA, "steps": [r.summary() for r in records]}
    if records:
        summary["mean"] = {k: float(np.mean([getattr(r, k) for r in records])) for k in ("T", "L", "width", "speed")}
    if extra:
        summary.update(extra)
    p = out / "summary.json"
    p.write_text(json.dumps(summary, indent=2))
    paths["summary"] = p
    return paths


def with_gains(config: SimConfig, gains: ControlGains) -> SimConfig:
    return replace(config, gains=gains)
