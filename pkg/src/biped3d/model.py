"""Kinematics and single-support dynamics of the five-link point-mass biped.

The mass matrix and bias vector are obtained by automatic differentiation of
the point-mass positions: for point masses the Euler-Lagrange equations read
``sum_i m_i J_i' (J_i qdd + Jdot_i qd + g e_z) = B u``, so

    D = sum_i m_i J_i' J_i,        H = sum_i m_i J_i' (Jdot_i qd + g e_z).

All jitted kernels take a parameter vector ``p = [g, W, L1, L2, L3, m1, m2, m3]``
whose hip width already carries the stance sign (``-W`` for leg 2).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._jax import jax, jnp
from .frames import Leg, as_leg
from .params import RobotParams

B = np.vstack([np.zeros((2, 6)), np.eye(6)])
EZ = np.array([0.0, 0.0, 1.0])


@dataclass
class RobotState:
    q: np.ndarray
    dq: np.ndarray
    stance_leg: Leg = Leg.LEG1

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(8)
        self.dq = np.asarray(self.dq, dtype=float).reshape(8)
        self.stance_leg = as_leg(self.stance_leg)

    def copy(self) -> "RobotState":
        return RobotState(self.q.copy(), self.dq.copy(), self.stance_leg)


@dataclass
class ExtendedState:
    """Single-support state plus stance-foot pose (constant over a phase)."""

    state: RobotState
    x_st: float = 0.0
    y_st: float = 0.0
    z_st: float = 0.0
    q0_st: float = 0.0

    @property
    def qe(self) -> np.ndarray:
        return np.concatenate([self.state.q, [self.x_st, self.y_st, self.z_st, self.q0_st]])

    @property
    def dqe(self) -> np.ndarray:
        return np.concatenate([self.state.dq, np.zeros(4)])


@dataclass
class Dynamics:
    D: np.ndarray
    H: np.ndarray
    B: np.ndarray = field(default_factory=lambda: B.copy())


# --------------------------------------------------------------------------
# jax kernels
# --------------------------------------------------------------------------

def _rx(a):
    c, s = jnp.cos(a), jnp.sin(a)
    return jnp.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = jnp.cos(a), jnp.sin(a)
    return jnp.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = jnp.cos(a), jnp.sin(a)
    return jnp.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _chain(q, p):
    """Joint positions and link rotations in the (unyawed) stance-foot frame."""
    W, L1, L2, L3 = p[1], p[2], p[3], p[4]
    ez = jnp.array([0.0, 0.0, 1.0])
    ey = jnp.array([0.0, 1.0, 0.0])
    R_ss = _rx(q[0]) @ _ry(-q[1])
    knee_st = L1 * R_ss @ ez
    R_ts = R_ss @ _ry(-q[2])
    hip_st = knee_st + L2 * R_ts @ ez
    R_tor = R_ts @ _ry(-q[3]) @ _rx(q[4])
    hip_sw = hip_st + W * R_tor @ ey
    torso = 0.5 * (hip_st + hip_sw) + L3 * R_tor @ ez
    R_tw = R_tor @ _rx(-q[5]) @ _ry(q[6])
    knee_sw = hip_sw - L2 * R_tw @ ez
    R_sw = R_tw @ _ry(q[7])
    foot_sw = knee_sw - L1 * R_sw @ ez
    return dict(knee_st=knee_st, hip_st=hip_st, hip_sw=hip_sw, torso=torso,
                knee_sw=knee_sw, foot_sw=foot_sw, R_shin_st=R_ss, R_torso=R_tor, R_shin_sw=R_sw)


def _masses(p):
    return jnp.array([p[5], p[6], p[7], p[6], p[5]])


def _points(q, p):
    """(5, 3) point-mass positions: stance shin, stance thigh, torso, swing thigh, swing shin."""
    c = _chain(q, p)
    return jnp.stack([
        0.5 * c["knee_st"],
        0.5 * (c["knee_st"] + c["hip_st"]),
        c["torso"],
        0.5 * (c["hip_sw"] + c["knee_sw"]),
        0.5 * (c["knee_sw"] + c["foot_sw"]),
    ])


def _foot(q, p):
    return _chain(q, p)["foot_sw"]


def _com(q, p):
    m = _masses(p)
    return (m[:, None] * _points(q, p)).sum(0) / m.sum()


def _dd(fun, q, dq):
    """Second directional derivative d^2/ds^2 fun(q + s dq) at s = 0."""
    return jax.jvp(lambda x: jax.jvp(fun, (x,), (dq,))[1], (q,), (dq,))[1]


@jax.jit
def _mass_matrix(q, p):
    J = jax.jacfwd(_points)(q, p)  # (5, 3, 8)
    m = _masses(p)
    return jnp.einsum("i,ika,ikb->ab", m, J, J)


@jax.jit
def _bias(q, dq, p):
    J = jax.jacfwd(_points)(q, p)
    acc = _dd(lambda x: _points(x, p), q, dq) + jnp.array([0.0, 0.0, p[0]])
    return jnp.einsum("i,ika,ik->a", _masses(p), J, acc)


@jax.jit
def _gravity(q, p):
    J = jax.jacfwd(_points)(q, p)
    return p[0] * jnp.einsum("i,ia->a", _masses(p), J[:, 2, :])


@jax.jit
def _mass_and_bias(q, dq, p):
    J = jax.jacfwd(_points)(q, p)
    m = _masses(p)
    acc = _dd(lambda x: _points(x, p), q, dq) + jnp.array([0.0, 0.0, p[0]])
    return jnp.einsum("i,ika,ikb->ab", m, J, J), jnp.einsum("i,ika,ik->a", m, J, acc)


def _points_ext(qe, p):
    base = qe[8:11]
    R = _rz(qe[11])
    return base + _points(qe[:8], p) @ R.T


def _swing_pose_ext(qe, p):
    c = _chain(qe[:8], p)
    R = _rz(qe[11])
    foot = qe[8:11] + R @ c["foot_sw"]
    Rw = R @ c["R_shin_sw"]
    yaw = jnp.arctan2(-Rw[0, 1], Rw[1, 1])
    return jnp.concatenate([foot, yaw[None]])


@jax.jit
def _extended(qe, p):
    J = jax.jacfwd(_points_ext)(qe, p)
    De = jnp.einsum("i,ika,ikb->ab", _masses(p), J, J)
    Esw = jax.jacfwd(_swing_pose_ext)(qe, p)
    return De, Esw


@jax.jit
def _foot_kin(q, dq, p):
    """Swing foot position and velocity."""
    return jax.jvp(lambda x: _foot(x, p), (q,), (dq,))


@jax.jit
def _com_kin(q, dq, ddq, p):
    pos, vel = jax.jvp(lambda x: _com(x, p), (q,), (dq,))
    Jc = jax.jacfwd(_com)(q, p)
    acc = Jc @ ddq + _dd(lambda x: _com(x, p), q, dq)
    return pos, vel, acc


_foot_jac = jax.jit(jax.jacfwd(_foot))
_com_jac = jax.jit(jax.jacfwd(_com))
_points_j = jax.jit(_points)
_chain_j = jax.jit(_chain)


# --------------------------------------------------------------------------
# public numpy API
# --------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _p_cached(params: RobotParams, sign: float) -> np.ndarray:
    p = params.as_array()
    p[1] *= sign
    p.setflags(write=False)
    return p


def param_vector(params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    """Parameter vector for the jitted kernels, hip width signed by stance leg."""
    return _p_cached(params, as_leg(stance).sign)


def mass_matrix(q, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    return np.asarray(_mass_matrix(np.asarray(q, float), param_vector(params, stance)))


def bias_vector(q, dq, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    """Coriolis, centrifugal and gravity terms H(q, dq)."""
    return np.asarray(_bias(np.asarray(q, float), np.asarray(dq, float), param_vector(params, stance)))


def gravity_vector(q, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    return np.asarray(_gravity(np.asarray(q, float), param_vector(params, stance)))


def dynamics(q, dq, params: RobotParams, stance=Leg.LEG1) -> Dynamics:
    D, H = _mass_and_bias(np.asarray(q, float), np.asarray(dq, float), param_vector(params, stance))
    return Dynamics(np.asarray(D), np.asarray(H))


def forward_dynamics(q, dq, u, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    D, H = _mass_and_bias(np.asarray(q, float), np.asarray(dq, float), param_vector(params, stance))
    return np.linalg.solve(np.asarray(D), B @ np.asarray(u, float) - np.asarray(H))


def kinetic_energy(q, dq, params: RobotParams, stance=Leg.LEG1) -> float:
    dq = np.asarray(dq, float)
    return 0.5 * float(dq @ mass_matrix(q, params, stance) @ dq)


def potential_energy(q, params: RobotParams, stance=Leg.LEG1) -> float:
    pts = np.asarray(_points_j(np.asarray(q, float), param_vector(params, stance)))
    m = np.array([params.m1, params.m2, params.m3, params.m2, params.m1])
    return float(params.g * m @ pts[:, 2])


def total_energy(q, dq, params: RobotParams, stance=Leg.LEG1) -> float:
    return kinetic_energy(q, dq, params, stance) + potential_energy(q, params, stance)


def mass_positions(q, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    return np.asarray(_points_j(np.asarray(q, float), param_vector(params, stance)))


def joint_positions(q, params: RobotParams, stance=Leg.LEG1) -> dict[str, np.ndarray]:
    """Stance knee/hip, swing hip/knee/foot, torso mass and link rotations."""
    c = _chain_j(np.asarray(q, float), param_vector(params, stance))
    return {k: np.asarray(v) for k, v in c.items()}


def swing_foot_position(q, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    """Swing leg end in the stance-foot frame, (x_sw, y_sw, z_sw)."""
    return joint_positions(q, params, stance)["foot_sw"]


def swing_foot_velocity(q, dq, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    _, v = _foot_kin(np.asarray(q, float), np.asarray(dq, float), param_vector(params, stance))
    return np.asarray(v)


def swing_foot_jacobian(q, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    return np.asarray(_foot_jac(np.asarray(q, float), param_vector(params, stance)))


def center_of_mass(q, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    pts = mass_positions(q, params, stance)
    m = np.array([params.m1, params.m2, params.m3, params.m2, params.m1])
    return m @ pts / m.sum()


def com_jacobian(q, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    return np.asarray(_com_jac(np.asarray(q, float), param_vector(params, stance)))


def ground_reaction(q, dq, ddq, params: RobotParams, stance=Leg.LEG1, q0: float = 0.0) -> np.ndarray:
    """Stance-foot reaction force, total mass times (CoM acceleration + g e_z).

    Expressed in the inertial frame; ``q0`` is the stance-frame yaw.
    """
    _, _, acc = _com_kin(np.asarray(q, float), np.asarray(dq, float), np.asarray(ddq, float),
                         param_vector(params, stance))
    F = params.total_mass * (np.asarray(acc) + params.g * EZ)
    if q0:
        c, s = np.cos(q0), np.sin(q0)
        F = np.array([c * F[0] - s * F[1], s * F[0] + c * F[1], F[2]])
    return F


def extended_dynamics(ext: ExtendedState, params: RobotParams) -> tuple[np.ndarray, np.ndarray]:
    """(D_e, E_sw) over the 12 extended coordinates [q, x_st, y_st, z_st, q0_st]."""
    De, Esw = _extended(ext.qe, param_vector(params, ext.state.stance_leg))
    return np.asarray(De), np.asarray(Esw)


def swing_pose_extended(qe, params: RobotParams, stance=Leg.LEG1) -> np.ndarray:
    """[x_sw, y_sw, z_sw, yaw of the swing shin] in the inertial frame."""
    return np.asarray(jax.jit(_swing_pose_ext)(np.asarray(qe, float), param_vector(params, stance)))
