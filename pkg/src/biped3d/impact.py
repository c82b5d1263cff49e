"""Rigid plastic impact of the swing foot and relabeling to the new stance chart."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from ._jax import jax, jnp
from .errors import OffSurface, SingularImpactMatrix
from .frames import Leg, as_leg, mirror
from .model import RobotState
from .params import RobotParams

SURFACE_TOL = 1e-6
COND_LIMIT = 1e12


@dataclass
class ImpactResult:
    q_plus: np.ndarray
    dq_plus: np.ndarray
    impulse: np.ndarray  # (Fx, Fy, Fz, yaw moment) at the new stance foot
    stance_leg_new: Leg
    dq0: float  # stance-yaw increment
    foot_new: np.ndarray  # new stance foot, expressed in the old stance frame
    dqe_plus: np.ndarray  # post-impact extended velocity in the old chart

    @property
    def state(self) -> RobotState:
        return RobotState(self.q_plus, self.dq_plus, self.stance_leg_new)


def _relabel_ext(qe, p):
    """Extended coordinates of the new chart as a function of the old ones."""
    c = model._chain(qe[:8], p)
    Rz = model._rz(qe[11])
    R = Rz @ c["R_shin_sw"]
    q0 = jnp.arctan2(-R[0, 1], R[1, 1])
    q1 = jnp.arcsin(R[2, 1])
    q2 = -jnp.arctan2(-R[2, 0], R[2, 2])
    foot = qe[8:11] + Rz @ c["foot_sw"]
    q = qe[:8]
    return jnp.concatenate([jnp.stack([q1, q2, q[7], q[6], q[5], q[4], q[3], q[2]]), foot, q0[None]])


_relabel_j = jax.jit(_relabel_ext)


@jax.jit
def _relabel_with_rate(qe, dqe, p):
    return jax.jvp(lambda x: _relabel_ext(x, p), (qe,), (dqe,))


def relabel(q, params: RobotParams, stance=Leg.LEG1, q0: float = 0.0) -> tuple[np.ndarray, float]:
    """Coordinates of the same double-support configuration in the other leg's chart.

    Returns the new configuration and the stance-yaw increment ``q0_new - q0``.
    """
    stance = as_leg(stance)
    qe = np.concatenate([np.asarray(q, float), [0.0, 0.0, 0.0, q0]])
    out = np.asarray(_relabel_j(qe, model.param_vector(params, stance)))
    return out[:8], float(out[11] - q0)


def impact_map(state: RobotState, params: RobotParams, q0: float = 0.0,
               surface_tol: float = SURFACE_TOL, check_surface: bool = True) -> ImpactResult:
    """Velocity jump at foot strike followed by relabeling into the new stance chart.

    Solves ``[[De, -Esw'], [Esw, 0]] [dqe+; F] = [De dqe-; 0]`` and maps the
    extended post-impact velocity through the relabeling Jacobian.
    """
    q, dq, leg = state.q, state.dq, state.stance_leg
    p = model.param_vector(params, leg)
    if check_surface:
        foot = model.swing_foot_position(q, params, leg)
        if abs(foot[2]) > surface_tol or foot[0] <= 0.0:
            raise OffSurface(f"swing foot not on the switching surface: {foot}")
    qe = np.concatenate([q, [0.0, 0.0, 0.0, q0]])
    dqe = np.concatenate([dq, np.zeros(4)])
    De, Esw = (np.asarray(a) for a in model._extended(qe, p))
    A = np.block([[De, -Esw.T], [Esw, np.zeros((4, 4))]])
    if np.linalg.cond(A) > COND_LIMIT:
        raise SingularImpactMatrix("impact matrix is numerically singular")
    sol = np.linalg.solve(A, np.concatenate([De @ dqe, np.zeros(4)]))
    dqe_plus, F = sol[:12], sol[12:]
    qe_new, dqe_new = (np.asarray(a) for a in _relabel_with_rate(qe, dqe_plus, p))
    return ImpactResult(q_plus=qe_new[:8], dq_plus=dqe_new[:8], impulse=F, stance_leg_new=leg.other,
                        dq0=float(qe_new[11] - q0), foot_new=qe_new[8:11], dqe_plus=dqe_plus)


def impact_canonical(q, dq, params: RobotParams, **kw) -> tuple[np.ndarray, np.ndarray, ImpactResult]:
    """Impact from a leg-1 chart state; the result is mirrored back into the leg-1 chart.

    Because the leg-2 model is the mirror image of the leg-1 model, a whole
    walk can be computed in leg-1 coordinates by mirroring after every impact.
    """
    res = impact_map(RobotState(q, dq, Leg.LEG1), params, **kw)
    return mirror(res.q_plus), mirror(res.dq_plus), res
