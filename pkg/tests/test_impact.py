import numpy as np
import pytest

from biped3d import model
from biped3d.checks import NOMINAL_Q, check_impact, on_surface_states
from biped3d.errors import OffSurface
from biped3d.frames import Leg
from biped3d.impact import impact_canonical, impact_map
from biped3d.model import RobotState


def test_impact_never_adds_energy_and_stops_the_new_stance_foot(params):
    for r in check_impact(params, n=50):
        assert r.passed, r.line()


def test_impact_is_linear_in_velocity(params, rng):
    (q, dq), = on_surface_states(1, params, rng)
    a = impact_map(RobotState(q, dq, Leg.LEG1), params).dq_plus
    b = impact_map(RobotState(q, 2.5 * dq, Leg.LEG1), params).dq_plus
    assert np.allclose(b, 2.5 * a, atol=1e-10)


def test_impact_switches_stance_and_rejects_off_surface_states(params, rng):
    (q, dq), = on_surface_states(1, params, rng)
    res = impact_map(RobotState(q, dq, Leg.LEG1), params)
    assert res.stance_leg_new is Leg.LEG2
    # the new swing foot is the old stance foot, lying on the ground
    assert abs(model.swing_foot_position(res.q_plus, params, Leg.LEG2)[2]) < 1e-10
    with pytest.raises(OffSurface):
        impact_map(RobotState(NOMINAL_Q + 0.2, dq, Leg.LEG1), params)


def test_canonical_impact_reproduces_gait_boundary(torque_gait, params):
    g = torque_gait
    qp, dqp, _ = impact_canonical(g.qf, g.dqf, params)
    assert np.allclose(qp, g.qi, atol=1e-10)
    assert np.allclose(dqp, g.dqi, atol=1e-9)
