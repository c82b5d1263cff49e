import numpy as np
import pytest

from biped3d import constraints as C
from biped3d.controller import (ControlGains, decoupling_matrix, feedback_torque, nominal_torque,
                                output_acceleration)


@pytest.fixture
def off_orbit(torque_gait, rng):
    g = torque_gait
    return g.qi + np.deg2rad(2.0) * rng.normal(size=8), g.dqi + 0.2 * rng.normal(size=8)


def test_nominal_torque_zeroes_output_acceleration(torque_gait, frontal_gait, params, off_orbit):
    q, dq = off_orbit
    for g in (torque_gait, frontal_gait):
        u = nominal_torque(q, dq, g, params)
        assert np.max(np.abs(output_acceleration(q, dq, u, g, params))) < 1e-8


def test_feedback_imposes_pd_error_dynamics(torque_gait, params, off_orbit):
    q, dq = off_orbit
    gains = ControlGains.from_scalars(kp=1.5, kd=2.5, epsilon=0.1)
    u = feedback_torque(q, dq, torque_gait, params, gains)
    y, dy, _ = C.output(q, dq, torque_gait)
    ddy = output_acceleration(q, dq, u, torque_gait, params)
    expected = -(gains.Kp @ y) / gains.epsilon**2 - (gains.Kd @ dy) / gains.epsilon
    assert np.allclose(ddy, expected, atol=1e-7)


def test_feedback_with_corrections(torque_gait, params, off_orbit):
    q, dq = off_orbit
    hc = C.stride_correction_for(q, dq, torque_gait)
    hs = C.event_term_coeffs(np.full(6, 0.01), torque_gait.theta_i, torque_gait.theta_f)
    u = nominal_torque(q, dq, torque_gait, params, hc, hs)
    ddy = output_acceleration(q, dq, u, torque_gait, params, hc, hs)
    assert np.max(np.abs(ddy)) < 1e-8


def test_error_dynamics_are_hurwitz():
    ev = np.linalg.eigvals(ControlGains().error_dynamics())
    assert np.all(ev.real < 0)


def test_decoupling_matrix_well_conditioned_along_orbit(torque_gait, params):
    for th in np.linspace(torque_gait.theta_i, torque_gait.theta_f, 5):
        q = C.q_from_reduced(torque_gait.qi[0], th, torque_gait)
        assert np.linalg.cond(decoupling_matrix(q, torque_gait, params)) < 1e6


def test_saturation_clips_torque(torque_gait, params, off_orbit):
    q, dq = off_orbit
    u = feedback_torque(q, dq, torque_gait, params, ControlGains.from_scalars(u_max=0.5))
    assert np.max(np.abs(u)) <= 0.5


@pytest.mark.parametrize("kw", [{"kp": -1.0}, {"kd": 0.0}, {"epsilon": 0.0}, {"u_max": -2.0}])
def test_gain_validation(kw):
    with pytest.raises(ValueError):
        ControlGains.from_scalars(**kw)
