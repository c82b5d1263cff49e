"""Frame and angle conventions (the single source of truth for signs).

Inertial frame: x forward (walking direction), y lateral, z up.  The stance
foot frame has its origin at the stance contact point and is yawed by
``q0`` about z.

Generalized coordinates for support on leg 1 (leg 2 uses the same formulas
with the hip width negated):

====  ===========================================================
q1    stance shin roll (absolute, about x)
q2    stance shin pitch (absolute, about y); the shin leans forward by -q2
q3    stance knee flexion (positive bends the knee forward)
q4    stance hip pitch (torso relative to thigh, about y)
q5    stance hip roll (about x)
q6    swing hip roll (about x)
q7    swing hip pitch (about y)
q8    swing knee flexion
====  ===========================================================

Link orientations::

    R_shin_st  = Rz(q0) Rx(q1) Ry(-q2)
    R_thigh_st = R_shin_st Ry(-q3)
    R_torso    = R_thigh_st Ry(-q4) Rx(q5)
    R_thigh_sw = R_torso Rx(-q6) Ry(q7)
    R_shin_sw  = R_thigh_sw Ry(q8)

Every physical joint keeps the same angle definition whichever leg is in
stance, so relabeling at impact is the plain swap
``[q3..q8] -> [q8..q3]``.  Link axes point from the foot towards the hip;
the swing hip sits at ``+W`` along the torso y-axis for support on leg 1.

The phase variable is the sagittal angle of the virtual stance leg,
``theta = -q2 - q3/2``, increasing during forward walking.

Left/right mirroring (y -> -y) negates the roll-type angles q1, q5, q6 and
the yaw q0 while keeping the pitch-type angles.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np

# indices (0-based) of roll-type coordinates negated by the mirror symmetry
MIRROR_SIGN = np.array([-1.0, 1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0])
# q3..q8 -> q8..q3
RELABEL_PERM = np.array([0, 1, 7, 6, 5, 4, 3, 2])
ACTUATED = slice(2, 8)


class Leg(IntEnum):
    LEG1 = 1
    LEG2 = 2

    @property
    def sign(self) -> float:
        """Hip-width sign used by the model for this stance leg."""
        return 1.0 if self is Leg.LEG1 else -1.0

    @property
    def other(self) -> "Leg":
        return Leg.LEG2 if self is Leg.LEG1 else Leg.LEG1


def as_leg(leg) -> Leg:
    if isinstance(leg, Leg):
        return leg
    if isinstance(leg, str):
        return Leg[leg.upper()] if leg.upper() in Leg.__members__ else Leg(int(leg[-1]))
    return Leg(int(leg))


def mirror(q: np.ndarray) -> np.ndarray:
    """Mirror a configuration or velocity vector (q1, q5, q6 negated)."""
    return MIRROR_SIGN * np.asarray(q, dtype=float)


def theta_of(q) -> float:
    return -q[1] - 0.5 * q[2]


def dtheta_of(q, dq) -> float:
    return -dq[1] - 0.5 * dq[2]


def Rx(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def Ry(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def Rz(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def shin_angles(R: np.ndarray) -> tuple[float, float, float]:
    """Invert ``R = Rz(q0) Rx(q1) Ry(-q2)`` on the upright branch |q1|, |q2| < pi/2."""
    q0 = np.arctan2(-R[0, 1], R[1, 1])
    q1 = np.arcsin(np.clip(R[2, 1], -1.0, 1.0))
    c = np.arctan2(-R[2, 0], R[2, 2])
    return float(q0), float(q1), float(-c)
