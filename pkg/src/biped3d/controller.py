"""Within-stride control: the constraint-compatible torque u* and the
input-output linearizing feedback that drives the outputs to zero.

With outputs y = h(q) and single-support dynamics D q'' + H = B u,

    y'' = Jy D^-1 (B u - H) + dJy q',

so the decoupling matrix is ``A = Jy D^-1 B``.  u* zeroes y'' and the feedback
adds ``-A^-1 (Kp/eps^2 y + Kd/eps y')``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model
from ._jax import jax, jnp
from .constraints import EventTerm, GaitDesign, StrideCorrection, output_j, vc_arrays
from .errors import SingularDecoupling
from .frames import Leg
from .params import RobotParams

DECOUPLING_COND_LIMIT = 1e10


@dataclass(frozen=True)
class ControlGains:
    """PD gains on the output error, scaled by the time constant ``epsilon``."""

    Kp: np.ndarray = field(default_factory=lambda: np.eye(6))
    Kd: np.ndarray = field(default_factory=lambda: 2.0 * np.eye(6))
    epsilon: float = 0.05
    u_max: float | None = None  # symmetric saturation, off by default

    def __post_init__(self):
        Kp = np.asarray(self.Kp, float)
        Kd = np.asarray(self.Kd, float)
        if Kp.ndim == 1:
            Kp = np.diag(Kp)
        if Kd.ndim == 1:
            Kd = np.diag(Kd)
        if Kp.shape != (6, 6) or Kd.shape != (6, 6):
            raise ValueError("Kp and Kd must be 6x6 (or length-6 diagonals)")
        for name, K in (("Kp", Kp), ("Kd", Kd)):
            if np.min(np.linalg.eigvalsh(0.5 * (K + K.T))) <= 0:
                raise ValueError(f"{name} must be positive definite")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.u_max is not None and not self.u_max > 0:
            raise ValueError("u_max must be positive")
        object.__setattr__(self, "Kp", Kp)
        object.__setattr__(self, "Kd", Kd)

    @classmethod
    def from_scalars(cls, kp: float = 1.0, kd: float = 2.0, epsilon: float = 0.05, u_max=None) -> "ControlGains":
        return cls(kp * np.eye(6), kd * np.eye(6), epsilon, u_max)

    def error_dynamics(self) -> np.ndarray:
        """12x12 state matrix of (y, y') under the closed loop."""
        e = self.epsilon
        return np.block([[np.zeros((6, 6)), np.eye(6)], [-self.Kp / e**2, -self.Kd / e]])


def _control_terms(q, dq, vc, p):
    D, H = model._mass_and_bias(q, dq, p)
    yfun = lambda z: output_j(z, vc)  # noqa: E731
    y, dy = jax.jvp(yfun, (q,), (dq,))
    Jy = jax.jacfwd(yfun)(q)
    ddy0 = model._dd(yfun, q, dq)  # dJy q'
    DinvB = jnp.linalg.solve(D, jnp.vstack([jnp.zeros((2, 6)), jnp.eye(6)]))
    DinvH = jnp.linalg.solve(D, H)
    A = Jy @ DinvB
    ustar = jnp.linalg.solve(A, Jy @ DinvH - ddy0)
    return D, H, y, dy, A, ustar


@jax.jit
def _control(q, dq, vc, p, Kp, Kd, eps):
    D, H, y, dy, A, ustar = _control_terms(q, dq, vc, p)
    v = Kp @ y / eps**2 + Kd @ dy / eps
    u = ustar - jnp.linalg.solve(A, v)
    return u, ustar, y, dy, A


@jax.jit
def _closed_loop_rhs(x, vc, p, Kp, Kd, eps, umax):
    """[q', q''] of the full model under the feedback law (umax <= 0 disables saturation)."""
    q, dq = x[:8], x[8:16]
    D, H, y, dy, A, ustar = _control_terms(q, dq, vc, p)
    u = ustar - jnp.linalg.solve(A, Kp @ y / eps**2 + Kd @ dy / eps)
    u = jnp.where(umax > 0, jnp.clip(u, -umax, umax), u)
    ddq = jnp.linalg.solve(D, jnp.concatenate([jnp.zeros(2), u]) - H)
    return jnp.concatenate([dq, ddq])


def _check(A):
    A = np.asarray(A)
    c = np.linalg.cond(A)
    if not np.isfinite(c) or c > DECOUPLING_COND_LIMIT:
        raise SingularDecoupling(f"decoupling matrix condition number {c:.3g}")


def decoupling_matrix(q, design: GaitDesign, params: RobotParams, correction=None, event_term=None) -> np.ndarray:
    vc = vc_arrays(design, correction, event_term)
    p = model.param_vector(params, Leg.LEG1)
    A = _control_terms(jnp.asarray(q, float), jnp.zeros(8), vc, p)[4]
    return np.asarray(A)


def nominal_torque(q, dq, design: GaitDesign, params: RobotParams,
                   correction: StrideCorrection | None = None, event_term: EventTerm | None = None) -> np.ndarray:
    """u* such that the outputs have zero second derivative at (q, dq)."""
    g = ControlGains()
    vc = vc_arrays(design, correction, event_term)
    p = model.param_vector(params, Leg.LEG1)
    _, ustar, _, _, A = _control(np.asarray(q, float), np.asarray(dq, float), vc, p, g.Kp, g.Kd, g.epsilon)
    _check(A)
    return np.asarray(ustar)


def feedback_torque(q, dq, design: GaitDesign, params: RobotParams, gains: ControlGains | None = None,
                    correction: StrideCorrection | None = None, event_term: EventTerm | None = None) -> np.ndarray:
    """u = u* - A^-1 (Kp/eps^2 y + Kd/eps y')."""
    g = gains or ControlGains()
    vc = vc_arrays(design, correction, event_term)
    p = model.param_vector(params, Leg.LEG1)
    u, _, _, _, A = _control(np.asarray(q, float), np.asarray(dq, float), vc, p, g.Kp, g.Kd, g.epsilon)
    _check(A)
    u = np.asarray(u)
    if g.u_max is not None:
        u = np.clip(u, -g.u_max, g.u_max)
    return u


def output_acceleration(q, dq, u, design: GaitDesign, params: RobotParams, correction=None, event_term=None):
    """y'' of the full model under torque u (used to verify the control laws)."""
    vc = vc_arrays(design, correction, event_term)
    p = model.param_vector(params, Leg.LEG1)
    q, dq = jnp.asarray(q, float), jnp.asarray(dq, float)
    ddq = model.forward_dynamics(np.asarray(q), np.asarray(dq), u, params)
    yfun = lambda z: output_j(z, vc)  # noqa: E731
    Jy = jax.jacfwd(yfun)(q)
    return np.asarray(Jy @ ddq + model._dd(yfun, q, dq))
