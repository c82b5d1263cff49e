"""Hybrid zero dynamics: reduced flow, restricted Poincare map, linearization and DLQR.

All reduced computations run in the leg-1 chart; after every impact the state
is mirrored back (see :func:`biped3d.impact.impact_canonical`), so the one-step
map has the gait's pre-impact state as a fixed point.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import model
from ._jax import jax, jnp
from .constraints import (EventTerm, GaitDesign, StrideCorrection, event_term_coeffs, q_from_reduced_j,
                          stride_correction_for, vc_arrays)
from .errors import NoReturn, RiccatiDivergence, SingularReducedInertia
from .frames import Leg, dtheta_of, theta_of
from .impact import impact_canonical
from .params import RobotParams

log = logging.getLogger(__name__)

REPORT_SCHEMA = "biped3d.stability/1"
# perturbation sizes used for the reference Jacobians
DEFAULT_PERTURBATION = (np.deg2rad(0.075), np.deg2rad(0.375), np.deg2rad(0.375))
DEFAULT_BETA_PERTURBATION = np.deg2rad(0.075)
RTOL, ATOL = 1e-11, 1e-12


@dataclass
class ZdState:
    q1: float
    dq1: float
    dtheta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.dq1, self.dtheta])

    @classmethod
    def from_array(cls, x) -> "ZdState":
        return cls(float(x[0]), float(x[1]), float(x[2]))


# --------------------------------------------------------------------------
# reduced flow
# --------------------------------------------------------------------------

def _reduced_terms(x, vc, p):
    xi, dxi = x[:2], x[2:4]
    qfun = lambda z: q_from_reduced_j(z, vc)  # noqa: E731
    q, dq = jax.jvp(qfun, (xi,), (dxi,))
    Jxi = jax.jacfwd(qfun)(xi)
    bias = model._dd(qfun, xi, dxi)
    J = jax.jacfwd(model._points)(q, p)
    m = model._masses(p)
    D = jnp.einsum("i,ika,ikb->ab", m, J, J)
    acc = model._dd(lambda z: model._points(z, p), q, dq) + jnp.array([0.0, 0.0, p[0]])
    H = jnp.einsum("i,ika,ik->a", m, J, acc)
    A = D[:2] @ Jxi
    ddxi = jnp.linalg.solve(A, -(D[:2] @ bias + H[:2]))
    ddq = Jxi @ ddxi + bias
    return q, dq, ddq, ddxi, D, H, A


@jax.jit
def _zd_rhs(x, vc, p):
    q, dq, ddq, ddxi, D, H, _ = _reduced_terms(x, vc, p)
    u = (D @ ddq + H)[2:]
    return jnp.concatenate([x[2:4], ddxi, (u @ u)[None]])


@jax.jit
def _zd_signals(x, vc, p):
    """Full state, torque, reaction force and swing-foot kinematics along the reduced flow."""
    q, dq, ddq, ddxi, D, H, A = _reduced_terms(x, vc, p)
    u = (D @ ddq + H)[2:]
    foot, dfoot = jax.jvp(lambda z: model._foot(z, p), (q,), (dq,))
    pos, vel = jax.jvp(lambda z: model._com(z, p), (q,), (dq,))
    Jc = jax.jacfwd(model._com)(q, p)
    acc = Jc @ ddq + model._dd(lambda z: model._com(z, p), q, dq)
    F = model._masses(p).sum() * (acc + jnp.array([0.0, 0.0, p[0]]))
    return dict(q=q, dq=dq, ddq=ddq, u=u, F=F, foot=foot, dfoot=dfoot, detA=jnp.linalg.det(A))


_zd_signals_batch = jax.jit(jax.vmap(_zd_signals, in_axes=(0, None, None)))


@jax.jit
def _zd_foot(x, vc, p):
    q, dq = jax.jvp(lambda z: q_from_reduced_j(z, vc), (x[:2],), (x[2:4],))
    f, df = jax.jvp(lambda z: model._foot(z, p), (q,), (dq,))
    return f, df


def zero_dynamics_rhs(q1, theta, dq1, dtheta, design: GaitDesign, params: RobotParams,
                      correction: StrideCorrection | None = None, event_term: EventTerm | None = None):
    """(ddq1, ddtheta) of the swing-phase zero dynamics for the design's output selection."""
    vc = vc_arrays(design, correction, event_term)
    p = model.param_vector(params, Leg.LEG1)
    x = np.array([q1, theta, dq1, dtheta], float)
    sig = _zd_signals(x, vc, p)
    if abs(float(sig["detA"])) < 1e-12:
        raise SingularReducedInertia("reduced inertia matrix is singular")
    out = np.asarray(_zd_rhs(x, vc, p))
    return float(out[2]), float(out[3])


@dataclass
class ZdTrajectory:
    t: np.ndarray
    x: np.ndarray  # (N, 4): q1, theta, dq1, dtheta
    cost: float  # integral of u*'u* dt
    event: str
    sol: object = field(repr=False, default=None)
    vc: dict = field(repr=False, default=None)
    p: np.ndarray = field(repr=False, default=None)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def x_end(self) -> np.ndarray:
        return self.x[-1]

    def signals(self, t) -> dict:
        """Full-model signals reconstructed at time(s) t (requires dense output)."""
        t = np.asarray(t, float)
        if t.ndim == 0:
            y = self.sol.sol(t)
            return {k: np.asarray(v) for k, v in _zd_signals(y[:4], self.vc, self.p).items()}
        Y = np.stack([self.sol.sol(tk)[:4] for tk in t])
        return {k: np.asarray(v) for k, v in _zd_signals_batch(Y, self.vc, self.p).items()}

    def state_at(self, t) -> np.ndarray:
        return self.sol.sol(t)[:4]


def integrate_zero_dynamics(x0, design: GaitDesign, params: RobotParams, correction=None, event_term=None,
                            stop: str = "impact", t_max: float | None = None, dense: bool = False,
                            rtol: float = RTOL, atol: float = ATOL, min_progress: float = 0.02) -> ZdTrajectory:
    """Integrate the zero dynamics from x0 = (q1, theta, dq1, dtheta).

    ``stop='impact'`` ends at the first downward z_sw = 0 crossing with x_sw > 0;
    ``stop='theta_f'`` ends when theta reaches the design's theta_f.
    """
    vc = vc_arrays(design, correction, event_term)
    p = np.array(model.param_vector(params, Leg.LEG1))
    x0 = np.asarray(x0, float)
    th_start = x0[1]
    span = design.theta_f - design.theta_i
    if t_max is None:
        t_max = 4.0 * abs(span) / max(abs(x0[3]), 1e-3) + 1.0

    def f(t, y):
        return np.asarray(_zd_rhs(y[:4], vc, p))

    def ev_impact(t, y):
        return float(_zd_foot(y[:4], vc, p)[0][2])

    def ev_theta(t, y):
        return y[1] - design.theta_f

    def ev_stall(t, y):
        return y[3]

    ev_impact.terminal, ev_impact.direction = True, -1
    ev_theta.terminal, ev_theta.direction = True, 1
    ev_stall.terminal, ev_stall.direction = True, -1
    events = [ev_theta if stop == "theta_f" else ev_impact, ev_stall]

    y0 = np.concatenate([x0, [0.0]])
    t0 = 0.0
    ts, xs = [], []
    cost = 0.0
    sols = []
    while True:
        sol = solve_ivp(f, (t0, t_max), y0, method="DOP853", rtol=rtol, atol=atol, events=events,
                        dense_output=True)
        if sol.status == -1:
            raise NoReturn(f"zero dynamics integration failed: {sol.message}")
        sols.append(sol)
        ts.append(sol.t)
        xs.append(sol.y.T)
        if sol.status == 0:
            raise NoReturn("phase variable did not reach the switching surface")
        if sol.t_events[1].size:
            raise NoReturn("phase rate reached zero before the end of the step")
        te = sol.t_events[0][0]
        ye = sol.y_events[0][0]
        if stop == "impact":
            foot = np.asarray(_zd_foot(ye[:4], vc, p)[0])
            progress = (ye[1] - th_start) / span
            if foot[0] <= 0.0 or progress < min_progress:
                # scuffing or trivial lift-off contact: continue past it
                t0, y0 = te + 1e-9, sol.sol(te + 1e-9)
                continue
        break
    t = np.concatenate(ts)
    x = np.concatenate(xs)
    x[-1] = ye
    t[-1] = te
    cost = float(ye[4])
    dense_sol = _ChainedSolution(sols) if dense else None
    return ZdTrajectory(t=t, x=x[:, :4], cost=cost, event=stop, sol=dense_sol, vc=vc, p=p)


class _ChainedSolution:
    def __init__(self, sols):
        self.sols = sols

    def sol(self, t):
        t = np.asarray(t, float)
        for s in self.sols:
            if t.ndim == 0 and t <= s.t[-1]:
                return s.sol(t)
        if t.ndim == 0:
            return self.sols[-1].sol(t)
        out = np.empty((self.sols[0].y.shape[0], t.size))
        for i, ti in enumerate(t):
            out[:, i] = self.sol(ti)
        return out


# --------------------------------------------------------------------------
# restricted Poincare map
# --------------------------------------------------------------------------

def reconstruct(xz, design: GaitDesign, params: RobotParams, bracket: float = 0.15) -> tuple[np.ndarray, np.ndarray]:
    """Full pre-impact state on S cap Z from x^z = (q1, dq1, dtheta).

    theta is the root of z_sw(q(q1, theta)) = 0 closest to theta_f on the
    nominal constraint surface; velocities follow from the constraint differential.
    """
    q1, dq1, dth = (float(v) for v in xz)
    vc = vc_arrays(design)
    p = np.array(model.param_vector(params, Leg.LEG1))

    def z(th):
        return float(_zd_foot(np.array([q1, th, 0.0, 0.0]), vc, p)[0][2])

    lo, hi = design.theta_f - bracket, design.theta_f + bracket
    # walk outwards from theta_f to the nearest sign change
    grid = design.theta_f + np.linspace(-bracket, bracket, 61)
    vals = np.array([z(g) for g in grid])
    idx = np.where(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if idx.size == 0:
        raise NoReturn("no double-support configuration near theta_f for this q1")
    k = idx[np.argmin(np.abs(grid[idx] - design.theta_f))]
    th = brentq(z, grid[k], grid[k + 1], xtol=1e-15, rtol=1e-15)
    x = np.array([q1, th, dq1, dth])
    q, dq = jax.jvp(lambda s: q_from_reduced_j(s, vc), (jnp.asarray(x[:2]),), (jnp.asarray(x[2:]),))
    return np.asarray(q), np.asarray(dq)


def post_impact(q, dq, design: GaitDesign, params: RobotParams, beta=None):
    """Impact, relabel+mirror, and the stride corrections for the ensuing step."""
    qp, dqp, res = impact_canonical(q, dq, params, check_surface=False)
    corr = stride_correction_for(qp, dqp, design)
    th_i = theta_of(qp)
    ev = event_term_coeffs(beta, th_i, design.theta_f) if beta is not None and np.any(beta) else None
    x0 = np.array([qp[0], th_i, dqp[0], dtheta_of(qp, dqp)])
    return x0, corr, ev, qp, dqp, res


def restricted_poincare(xz, design: GaitDesign, params: RobotParams, beta=None, full: bool = False):
    """One step of the restricted Poincare map S cap Z -> S cap Z."""
    q, dq = reconstruct(xz, design, params)
    x0, corr, ev, *_ = post_impact(q, dq, design, params, beta)
    traj = integrate_zero_dynamics(x0, design, params, corr, ev, stop="impact")
    xe = traj.x_end
    out = np.array([xe[0], xe[2], xe[3]])
    if full:
        return out, traj
    return out


def fixed_point_residual(design: GaitDesign, params: RobotParams) -> np.ndarray:
    xs = design.xz_star
    return restricted_poincare(xs, design, params) - xs


def nominal_orbit(design: GaitDesign, params: RobotParams) -> ZdTrajectory:
    """One nominal step from the design's post-impact state (dense)."""
    x0 = np.array([design.qi[0], design.theta_i, design.dqi[0], design.dtheta_i])
    return integrate_zero_dynamics(x0, design, params, stop="impact", dense=True)


def orbit_samples(design: GaitDesign, params: RobotParams, n: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """(theta_k, q1(theta_k)) at n uniform phase values along the nominal step."""
    traj = nominal_orbit(design, params)
    th = np.linspace(design.theta_i, design.theta_f, n)
    th_end = traj.x_end[1]
    q1 = []
    for v in th:
        if v >= th_end:
            q1.append(traj.x_end[0])
            continue
        t = brentq(lambda s: traj.sol.sol(s)[1] - v, 0.0, traj.T, xtol=1e-14)
        q1.append(traj.sol.sol(t)[0])
    return th, np.array(q1)


FRONTAL_ROW = 3  # output row of q6, the swing-hip frontal angle


def frontal_com_coeffs(design: GaitDesign, params: RobotParams) -> np.ndarray:
    """Linearization at q_f of the lateral CoM-to-swing-foot distance, as a form on q."""
    return model.com_jacobian(design.qf, params)[1] - model.swing_foot_jacobian(design.qf, params)[1]


def reselect_frontal_com(design: GaitDesign, params: RobotParams, coeffs=None, n: int = 100,
                         name: str | None = None) -> GaitDesign:
    """The same orbit with the q6 output replaced by the frontal CoM distance.

    ``coeffs`` (8 numbers on q) default to the linearization at q_f; q1*(theta)
    is sampled from the nominal orbit so the orbit stays a zero of all outputs.
    """
    from .constraints import default_selection, selection_from_q_coeffs

    c = frontal_com_coeffs(design, params) if coeffs is None else np.asarray(coeffs, float)
    base = design.M if design.M is not None else default_selection()
    M = selection_from_q_coeffs(base, FRONTAL_ROW, c)
    knots = orbit_samples(design, params, n)
    out = design.with_selection(M, q1_knots=knots, name=name or f"{design.name}+frontal-com")
    out.K = None
    out.meta = dict(out.meta, output_coeffs_q=c.tolist())
    return out


# --------------------------------------------------------------------------
# linearization and DLQR
# --------------------------------------------------------------------------

@dataclass
class StabilityReport:
    Az: np.ndarray
    eigenvalues: np.ndarray
    spectral_radius: float
    perturbation: tuple
    F: np.ndarray | None = None
    K: np.ndarray | None = None
    closed_loop_eigenvalues: np.ndarray | None = None
    beta_perturbation: float | None = None
    fixed_point: np.ndarray | None = None
    fixed_point_residual: float | None = None
    label: str = ""

    @property
    def stable(self) -> bool:
        return self.spectral_radius < 1.0

    @property
    def verdict(self) -> str:
        return "STABLE" if self.stable else "UNSTABLE"

    def to_dict(self) -> dict:
        def cplx(v):
            return None if v is None else [[float(np.real(z)), float(np.imag(z))] for z in v]

        def mat(m):
            return None if m is None else np.asarray(m).tolist()

        d = {
            "schema": REPORT_SCHEMA,
            "label": self.label,
            "Az": mat(self.Az),
            "eigenvalues": cplx(self.eigenvalues),
            "spectral_radius": self.spectral_radius,
            "verdict": self.verdict,
            "F": mat(self.F),
            "K": mat(self.K),
            "closed_loop_eigenvalues": cplx(self.closed_loop_eigenvalues),
            "perturbation": {"dq1": self.perturbation[0], "ddq1": self.perturbation[1],
                             "ddtheta": self.perturbation[2], "beta": self.beta_perturbation},
            "fixed_point": mat(self.fixed_point),
            "fixed_point_residual": self.fixed_point_residual,
        }
        if self.closed_loop_eigenvalues is not None:
            d["closed_loop_spectral_radius"] = float(np.max(np.abs(self.closed_loop_eigenvalues)))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StabilityReport":
        def cplx(v):
            return None if v is None else np.array([complex(a, b) for a, b in v])

        def mat(m):
            return None if m is None else np.array(m, float)

        pert = d["perturbation"]
        return cls(Az=mat(d["Az"]), eigenvalues=cplx(d["eigenvalues"]), spectral_radius=d["spectral_radius"],
                   perturbation=(pert["dq1"], pert["ddq1"], pert["ddtheta"]), F=mat(d.get("F")), K=mat(d.get("K")),
                   closed_loop_eigenvalues=cplx(d.get("closed_loop_eigenvalues")),
                   beta_perturbation=pert.get("beta"), fixed_point=mat(d.get("fixed_point")),
                   fixed_point_residual=d.get("fixed_point_residual"), label=d.get("label", ""))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def sorted_eigenvalues(A) -> np.ndarray:
    ev = np.linalg.eigvals(A)
    return ev[np.argsort(-np.abs(ev))]


def jacobian_central(fun, x0, steps) -> np.ndarray:
    """Symmetric-difference Jacobian, one scalar step per input coordinate."""
    x0 = np.asarray(x0, float)
    cols = []
    for i, h in enumerate(steps):
        e = np.zeros_like(x0)
        e[i] = h
        cols.append((fun(x0 + e) - fun(x0 - e)) / (2 * h))
    return np.column_stack(cols)


def linearize(design: GaitDesign, params: RobotParams, perturbation=DEFAULT_PERTURBATION,
              with_F: bool = False, beta_perturbation: float = DEFAULT_BETA_PERTURBATION,
              K=None, warn: bool = True) -> StabilityReport:
    """A^z (and optionally F = dP/dbeta) by central differences about the gait's fixed point."""
    xs = design.xz_star
    res = float(np.max(np.abs(restricted_poincare(xs, design, params) - xs)))
    if res > 1e-6 and warn:
        log.warning("fixed-point residual %.2e exceeds 1e-6", res)
    Az = jacobian_central(lambda x: restricted_poincare(x, design, params), xs, perturbation)
    ev = sorted_eigenvalues(Az)
    rep = StabilityReport(Az=Az, eigenvalues=ev, spectral_radius=float(np.max(np.abs(ev))),
                          perturbation=tuple(float(v) for v in perturbation), fixed_point=xs,
                          fixed_point_residual=res, label=design.name)
    if with_F:
        rep.F = jacobian_central(lambda b: restricted_poincare(xs, design, params, beta=b), np.zeros(6),
                                 [beta_perturbation] * 6)
        rep.beta_perturbation = float(beta_perturbation)
    if K is not None and rep.F is not None:
        rep.K = np.asarray(K, float)
        rep.closed_loop_eigenvalues = sorted_eigenvalues(Az - rep.F @ rep.K)
    return rep


def linearize_closed_loop(design: GaitDesign, params: RobotParams, K=None,
                          perturbation=DEFAULT_PERTURBATION) -> StabilityReport:
    """Jacobian of the restricted map with beta = -K (x - x*) chosen at every impact."""
    K = design.K if K is None else np.asarray(K, float)
    if K is None:
        raise ValueError("closed-loop linearization needs a gain K")
    xs = design.xz_star
    fun = lambda x: restricted_poincare(x, design, params, beta=event_policy(x, xs, K))  # noqa: E731
    A = jacobian_central(fun, xs, perturbation)
    ev = sorted_eigenvalues(A)
    return StabilityReport(Az=A, eigenvalues=ev, spectral_radius=float(np.max(np.abs(ev))),
                           perturbation=tuple(float(v) for v in perturbation), K=K, fixed_point=xs,
                           label=f"{design.name} (event control)")


def dlqr(Az, F, r: float = 2.0, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Discrete LQR gain for Q = I, R = r I by fixed-point iteration of the Riccati equation.

    Returns K such that beta = -K dx minimizes sum(dx'dx + r beta'beta).
    """
    A = np.asarray(Az, float)
    Bm = np.asarray(F, float)
    if r <= 0:
        raise ValueError("r must be positive")
    n, m = Bm.shape
    Q = np.eye(n)
    R = r * np.eye(m)
    P = np.eye(n)
    for _ in range(max_iter):
        BtP = Bm.T @ P
        G = np.linalg.solve(R + BtP @ Bm, BtP @ A)
        Pn = A.T @ P @ A - A.T @ P @ Bm @ G + Q
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)) or np.max(np.abs(Pn)) > 1e15:
            raise RiccatiDivergence("Riccati iteration diverged; (A, F) not stabilizable")
        if np.max(np.abs(Pn - P)) <= tol * max(1.0, np.max(np.abs(Pn))):
            P = Pn
            break
        P = Pn
    else:
        raise RiccatiDivergence("Riccati iteration did not converge")
    K = np.linalg.solve(R + Bm.T @ P @ Bm, Bm.T @ P @ A)
    if np.max(np.abs(np.linalg.eigvals(A - Bm @ K))) >= 1.0:
        raise RiccatiDivergence("closed loop is not Schur stable")
    return K


def riccati_residual(Az, F, r, K=None) -> float:
    A, Bm = np.asarray(Az), np.asarray(F)
    P = _riccati_P(A, Bm, r)
    R = r * np.eye(Bm.shape[1])
    Rr = A.T @ P @ A - A.T @ P @ Bm @ np.linalg.solve(R + Bm.T @ P @ Bm, Bm.T @ P @ A) + np.eye(A.shape[0]) - P
    return float(np.max(np.abs(Rr)))


def _riccati_P(A, Bm, r, tol=1e-14, max_iter=100_000):
    P = np.eye(A.shape[0])
    R = r * np.eye(Bm.shape[1])
    for _ in range(max_iter):
        Pn = A.T @ P @ A - A.T @ P @ Bm @ np.linalg.solve(R + Bm.T @ P @ Bm, Bm.T @ P @ A) + np.eye(A.shape[0])
        if np.max(np.abs(Pn - P)) <= tol * max(1.0, np.max(np.abs(Pn))):
            return Pn
        P = Pn
    raise RiccatiDivergence("Riccati iteration did not converge")


def event_policy(xz, x_star, K) -> np.ndarray:
    """beta = -K (x^z - x^z*)."""
    return -np.asarray(K) @ (np.asarray(xz, float) - np.asarray(x_star, float))
