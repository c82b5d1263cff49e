"""Virtual constraints: phase variable, Bezier profiles, stride corrections and outputs.

The controlled output for every controller variant is

    y = M [q1; theta; q_a] - M q*(theta) - M_a (h_c(theta) + h_s(theta))

with ``q*(theta) = [q1*(theta); theta; h_d(theta)]``.  The default selection
``M = [0 0 I]`` gives back ``y = q_a - h_d(theta) - h_c - h_s``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from ._jax import jax, jnp
from .errors import DegeneratePhaseInterval, SingularOutputSelection, ZeroPhaseRate
from .frames import dtheta_of, theta_of

GAIT_SCHEMA = "biped3d.gait/1"
_BERN = np.array([comb(3, k) for k in range(4)], dtype=float)
# q1*(theta) is a least-squares Chebyshev series through the stored samples;
# smooth everywhere, unlike a spline, which keeps high-order integrators fast
Q1_DEGREE = 24


@dataclass
class PhaseVariable:
    theta: float
    theta_i: float
    theta_f: float

    @property
    def s(self) -> float:
        return (self.theta - self.theta_i) / (self.theta_f - self.theta_i)


@dataclass
class BezierConstraint:
    alpha: np.ndarray  # (4, 6) control points

    def __call__(self, theta, theta_i, theta_f):
        s = (np.asarray(theta, float) - theta_i) / (theta_f - theta_i)
        return bezier_eval(self.alpha, s)


def bezier_eval(alpha, s):
    s = np.asarray(s, float)
    basis = np.stack([_BERN[k] * s**k * (1 - s) ** (3 - k) for k in range(4)], axis=-1)
    return basis @ np.asarray(alpha)


def bezier_from_boundary(q_i_a, dq_i_a, q_f_a, dq_f_a, theta_i, theta_f, dtheta_i, dtheta_f) -> BezierConstraint:
    """Degree-3 Bezier joining the actuated boundary positions and theta-slopes."""
    if theta_f == theta_i:
        raise DegeneratePhaseInterval("theta_f equals theta_i")
    if dtheta_i == 0.0 or dtheta_f == 0.0:
        raise ZeroPhaseRate("phase rate is zero at a step boundary")
    span = (theta_f - theta_i) / 3.0
    q_i_a, dq_i_a, q_f_a, dq_f_a = (np.asarray(v, float) for v in (q_i_a, dq_i_a, q_f_a, dq_f_a))
    alpha = np.stack([
        q_i_a,
        q_i_a + span * dq_i_a / dtheta_i,
        q_f_a - span * dq_f_a / dtheta_f,
        q_f_a,
    ])
    return BezierConstraint(alpha)


def _poly_solve(rows, rhs):
    return np.linalg.solve(np.array(rows, float), np.asarray(rhs, float))


def _monomial_rows(t, n, order):
    """Row of d^order/dt^order [1, t, ..., t^(n-1)]."""
    row = np.zeros(n)
    for k in range(order, n):
        row[k] = np.prod(np.arange(k - order + 1, k + 1)) * t ** (k - order)
    return row


@dataclass
class StrideCorrection:
    """Quintic h_c on [theta_0, theta_1] in powers of (theta - theta_0), zero beyond."""

    y_i: np.ndarray
    dy_i: np.ndarray
    theta_0: float
    theta_1: float
    coef: np.ndarray  # (6, 6): power x joint

    def __call__(self, theta):
        return _piece_eval(theta, self.theta_0, self.theta_1, self.coef)

    def derivative(self, theta, order=1):
        return _piece_eval(theta, self.theta_0, self.theta_1, self.coef, order)


@dataclass
class EventTerm:
    """Sextic h_s on [theta_0, theta_1] in powers of (theta - theta_0), zero beyond."""

    beta: np.ndarray
    theta_0: float
    theta_1: float
    coef: np.ndarray  # (7, 6)

    def __call__(self, theta):
        return _piece_eval(theta, self.theta_0, self.theta_1, self.coef)

    def derivative(self, theta, order=1):
        return _piece_eval(theta, self.theta_0, self.theta_1, self.coef, order)


def _piece_eval(theta, a, b, coef, order=0):
    theta = np.asarray(theta, float)
    inside = (theta >= a) & (theta <= b)
    t = np.clip(theta, a, b) - a
    n = coef.shape[0]
    rows = np.stack([_monomial_rows(tt, n, order) for tt in np.atleast_1d(t)])
    val = rows @ coef
    if order > 0:
        val = np.where(np.atleast_1d(inside)[:, None], val, 0.0)
    return val.reshape(theta.shape + (coef.shape[1],))


def correction_coeffs(y_i, dy_i, theta_i, theta_f, dtheta_i) -> StrideCorrection:
    """h_c matching (y_i, dy_i/dtheta_i) at theta_i with zero curvature, vanishing to
    second order at mid-step."""
    if not dtheta_i > 0.0:
        raise ZeroPhaseRate(f"initial phase rate must be positive, got {dtheta_i}")
    if theta_f == theta_i:
        raise DegeneratePhaseInterval("theta_f equals theta_i")
    y_i, dy_i = np.asarray(y_i, float), np.asarray(dy_i, float)
    tm = 0.5 * (theta_f - theta_i)
    A = [_monomial_rows(0.0, 6, 0), _monomial_rows(0.0, 6, 1), _monomial_rows(0.0, 6, 2),
         _monomial_rows(tm, 6, 0), _monomial_rows(tm, 6, 1), _monomial_rows(tm, 6, 2)]
    rhs = np.zeros((6, y_i.size))
    rhs[0] = y_i
    rhs[1] = dy_i / dtheta_i
    coef = _poly_solve(A, rhs)
    return StrideCorrection(y_i, dy_i, float(theta_i), float(theta_i + tm), coef)


def event_term_coeffs(beta, theta_i, theta_f) -> EventTerm:
    """h_s: zero value, slope and curvature at theta_i, equal to beta at mid-step and
    vanishing to second order at 0.1 theta_i + 0.9 theta_f."""
    if theta_f == theta_i:
        raise DegeneratePhaseInterval("theta_f equals theta_i")
    beta = np.asarray(beta, float)
    tm = 0.5 * (theta_f - theta_i)
    te = 0.9 * (theta_f - theta_i)
    A = [_monomial_rows(0.0, 7, 0), _monomial_rows(0.0, 7, 1), _monomial_rows(0.0, 7, 2),
         _monomial_rows(tm, 7, 0),
         _monomial_rows(te, 7, 0), _monomial_rows(te, 7, 1), _monomial_rows(te, 7, 2)]
    rhs = np.zeros((7, beta.size))
    rhs[3] = beta
    coef = _poly_solve(A, rhs)
    return EventTerm(beta, float(theta_i), float(theta_i + te), coef)


def zero_correction(theta_i=0.0) -> StrideCorrection:
    return StrideCorrection(np.zeros(6), np.zeros(6), theta_i, theta_i + 1.0, np.zeros((6, 6)))


def zero_event_term(theta_i=0.0) -> EventTerm:
    return EventTerm(np.zeros(6), theta_i, theta_i + 1.0, np.zeros((7, 6)))


# --------------------------------------------------------------------------
# output selection and gait design
# --------------------------------------------------------------------------

def default_selection() -> np.ndarray:
    return np.hstack([np.zeros((6, 2)), np.eye(6)])


def selection_from_q_coeffs(M, row: int, coeffs_q) -> np.ndarray:
    """Replace one output row by a linear form given on (q1..q8).

    The form is rewritten on [q1; theta; q_a] using q2 = -theta - q3/2.
    """
    c = np.asarray(coeffs_q, float)
    M = np.array(M, float)
    M[row] = [c[0], -c[1], c[2] - 0.5 * c[1], c[3], c[4], c[5], c[6], c[7]]
    return M


@dataclass
class GaitDesign:
    """A periodic gait: fixed point, Bezier constraint and output selection.

    ``qf, dqf`` is the pre-impact state in the leg-1 chart; ``qi, dqi`` the
    post-impact state after relabeling and mirroring into the same chart.
    """

    alpha: np.ndarray
    theta_i: float
    theta_f: float
    qf: np.ndarray
    dqf: np.ndarray
    qi: np.ndarray
    dqi: np.ndarray
    q0_i: float = 0.0
    M: np.ndarray = field(default_factory=default_selection)
    q1_knots: tuple[np.ndarray, np.ndarray] | None = None
    K: np.ndarray | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, float).reshape(4, 6)
        for k in ("qf", "dqf", "qi", "dqi"):
            setattr(self, k, np.asarray(getattr(self, k), float).reshape(8))
        self.M = np.asarray(self.M, float).reshape(6, 8)
        if self.K is not None:
            self.K = np.asarray(self.K, float).reshape(6, 3)
        if self.q1_knots is not None:
            th, v = self.q1_knots
            self.q1_knots = (np.asarray(th, float), np.asarray(v, float))

    # -- derived quantities ------------------------------------------------
    @property
    def Ma(self) -> np.ndarray:
        return self.M[:, 2:]

    @property
    def k1(self) -> np.ndarray:
        """M_a^-1 M_1, the coupling of q1 into the actuated coordinates."""
        try:
            Ma_inv = np.linalg.inv(self.Ma)
        except np.linalg.LinAlgError as exc:
            raise SingularOutputSelection("M_a is singular") from exc
        if np.linalg.cond(self.Ma) > 1e12:
            raise SingularOutputSelection("M_a is singular")
        return Ma_inv @ self.M[:, 0]

    @property
    def is_default_selection(self) -> bool:
        return np.allclose(self.M, default_selection())

    @property
    def xz_star(self) -> np.ndarray:
        """Restricted Poincare fixed point [q1, dq1, dtheta] (pre-impact)."""
        return np.array([self.qf[0], self.dqf[0], dtheta_of(self.qf, self.dqf)])

    @property
    def dtheta_i(self) -> float:
        return dtheta_of(self.qi, self.dqi)

    @property
    def dtheta_f(self) -> float:
        return dtheta_of(self.qf, self.dqf)

    def hd(self, theta):
        return BezierConstraint(self.alpha)(theta, self.theta_i, self.theta_f)

    def q1_fit(self) -> np.polynomial.Chebyshev | None:
        """q1*(theta) fitted to the stored on-orbit samples (None if absent)."""
        if self.q1_knots is None:
            return None
        th, v = self.q1_knots
        deg = min(Q1_DEGREE, th.size - 1)
        return np.polynomial.Chebyshev.fit(th, v, deg, domain=[self.theta_i, self.theta_f])

    def q1_star(self, theta):
        """q1*(theta); linear beyond [theta_i, theta_f] to avoid polynomial blow-up."""
        fit = self.q1_fit()
        if fit is None:
            raise ValueError("gait has no q1*(theta) profile")
        theta = np.asarray(theta, float)
        tc = np.clip(theta, self.theta_i, self.theta_f)
        return fit(tc) + fit.deriv()(tc) * (theta - tc)

    def with_selection(self, M, q1_knots=None, name=None) -> "GaitDesign":
        d = GaitDesign.from_dict(self.to_dict())
        d.M = np.asarray(M, float)
        if q1_knots is not None:
            d.q1_knots = q1_knots
        if name is not None:
            d.name = name
        d.k1  # validates M_a
        return d

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "schema": GAIT_SCHEMA,
            "name": self.name,
            "alpha": self.alpha.tolist(),
            "theta_i": self.theta_i,
            "theta_f": self.theta_f,
            "qf": self.qf.tolist(),
            "dqf": self.dqf.tolist(),
            "qi": self.qi.tolist(),
            "dqi": self.dqi.tolist(),
            "q0_i": self.q0_i,
            "M": self.M.tolist(),
            "q1_knots": None if self.q1_knots is None else
            {"theta": self.q1_knots[0].tolist(), "q1": self.q1_knots[1].tolist()},
            "K": None if self.K is None else self.K.tolist(),
            "meta": self.meta,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GaitDesign":
        kn = d.get("q1_knots")
        return cls(
            alpha=d["alpha"], theta_i=float(d["theta_i"]), theta_f=float(d["theta_f"]),
            qf=d["qf"], dqf=d["dqf"], qi=d["qi"], dqi=d["dqi"], q0_i=float(d.get("q0_i", 0.0)),
            M=d.get("M") or default_selection(),
            q1_knots=None if not kn else (kn["theta"], kn["q1"]),
            K=d.get("K"), name=d.get("name", ""), meta=dict(d.get("meta") or {}),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "GaitDesign":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# jax evaluation of the full constraint (used inside the ODE right-hand sides)
# --------------------------------------------------------------------------

def _bez_j(theta, alpha, th0, th1):
    s = (theta - th0) / (th1 - th0)
    b = jnp.stack([_BERN[k] * s**k * (1 - s) ** (3 - k) for k in range(4)])
    return b @ alpha


def _piece_j(theta, a, b, coef):
    # where() rather than clip(): clip splits the gradient at theta == a
    t = jnp.where(theta < a, 0.0, jnp.where(theta > b, b - a, theta - a))
    acc = coef[-1]
    for k in range(coef.shape[0] - 2, -1, -1):
        acc = acc * t + coef[k]
    return acc


def _clenshaw(x, c):
    b1 = jnp.zeros_like(x)
    b2 = jnp.zeros_like(x)
    for k in range(c.shape[0] - 1, 0, -1):
        b1, b2 = 2.0 * x * b1 - b2 + c[k], b1
    return x * b1 - b2 + c[0]


def _cheb_j(theta, c, dom):
    """Chebyshev series on ``dom``, continued linearly (C1) outside it."""
    x = (2.0 * theta - dom[0] - dom[1]) / (dom[1] - dom[0])
    xc = jnp.clip(x, -1.0, 1.0)
    v, dv = jax.jvp(lambda z: _clenshaw(z, c), (xc,), (jnp.ones_like(xc),))
    return v + dv * (x - xc)


def q_star_j(theta, vc):
    """[q1*(theta), theta, h_d(theta)] (8-vector in the [q1; theta; q_a] coordinates)."""
    qa = _bez_j(theta, vc["alpha"], vc["th0"], vc["th1"])
    q1 = _cheb_j(theta, vc["q1c"], vc["q1dom"])
    return jnp.concatenate([q1[None], theta[None], qa])


def corrections_j(theta, vc):
    return (_piece_j(theta, vc["hc_a"], vc["hc_b"], vc["hc"]) +
            _piece_j(theta, vc["hs_a"], vc["hs_b"], vc["hs"]))


def qa_profile_j(theta, vc):
    """q_a = profile(theta) - k1 q1 on the constraint surface."""
    qs = q_star_j(theta, vc)
    return qs[2:] + vc["k1"] * qs[0] + corrections_j(theta, vc)


def q_from_reduced_j(xi, vc):
    """Full configuration from (q1, theta) on the constraint surface."""
    q1, th = xi[0], xi[1]
    qa = qa_profile_j(th, vc) - vc["k1"] * q1
    return jnp.concatenate([jnp.stack([q1, -th - 0.5 * qa[0]]), qa])


def to_reduced_coords_j(q):
    return jnp.concatenate([q[0:1], (-q[1] - 0.5 * q[2])[None], q[2:]])


def output_j(q, vc):
    z = to_reduced_coords_j(q)
    th = z[1]
    return vc["M"] @ z - vc["M"] @ q_star_j(th, vc) - vc["Ma"] @ corrections_j(th, vc)


@jax.jit
def _output_all(q, dq, vc):
    y, dy = jax.jvp(lambda x: output_j(x, vc), (q,), (dq,))
    Jy = jax.jacfwd(output_j)(q, vc)
    return y, dy, Jy


_q_from_reduced = jax.jit(q_from_reduced_j)


def vc_arrays(design: GaitDesign, correction: StrideCorrection | None = None,
              event_term: EventTerm | None = None) -> dict:
    """Pack a design (+ optional stride corrections) into arrays for the jax kernels."""
    correction = correction or zero_correction(design.theta_i)
    event_term = event_term or zero_event_term(design.theta_i)
    fit = design.q1_fit()
    q1c = np.zeros(1) if fit is None else fit.coef
    f = lambda v: np.asarray(v, dtype=np.float64)
    return {
        "alpha": f(design.alpha), "th0": f(design.theta_i), "th1": f(design.theta_f),
        "k1": f(design.k1), "M": f(design.M), "Ma": f(design.Ma),
        "q1c": f(q1c), "q1dom": f([design.theta_i, design.theta_f]),
        "hc_a": f(correction.theta_0), "hc_b": f(correction.theta_1), "hc": f(correction.coef),
        "hs_a": f(event_term.theta_0), "hs_b": f(event_term.theta_1), "hs": f(event_term.coef),
    }


def output(q, dq, design: GaitDesign, correction: StrideCorrection | None = None,
           event_term: EventTerm | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(y, dy, dy/dq) for the output selected by ``design.M`` with optional corrections."""
    vc = vc_arrays(design, correction, event_term)
    y, dy, Jy = _output_all(np.asarray(q, float), np.asarray(dq, float), vc)
    return np.asarray(y), np.asarray(dy), np.asarray(Jy)


def qa_from_constraint(q1, theta, design: GaitDesign, correction=None, event_term=None) -> np.ndarray:
    """Actuated coordinates implied by y = 0 at (q1, theta)."""
    vc = vc_arrays(design, correction, event_term)
    return np.asarray(_q_from_reduced(jnp.array([q1, theta], dtype=float), vc))[2:]


def q_from_reduced(q1, theta, design: GaitDesign, correction=None, event_term=None) -> np.ndarray:
    vc = vc_arrays(design, correction, event_term)
    return np.asarray(_q_from_reduced(jnp.array([q1, theta], dtype=float), vc))


def stride_correction_for(q, dq, design: GaitDesign) -> StrideCorrection:
    """h_c that zeroes the output error of the state (q, dq) at the start of a step."""
    y, dy, _ = output(q, dq, design)
    Ma_inv = np.linalg.inv(design.Ma)
    return correction_coeffs(Ma_inv @ y, Ma_inv @ dy, theta_of(q), design.theta_f, dtheta_of(q, dq))


__all__ = [
    "PhaseVariable", "BezierConstraint", "StrideCorrection", "EventTerm", "GaitDesign",
    "bezier_from_boundary", "correction_coeffs", "event_term_coeffs", "output", "qa_from_constraint",
    "theta_of", "dtheta_of", "default_selection", "selection_from_q_coeffs", "stride_correction_for",
]
