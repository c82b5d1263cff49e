import numpy as np
import pytest

from biped3d import model
from biped3d.checks import NOMINAL_Q, check_energy, check_jacobians, check_mass_matrix, random_states
from biped3d.frames import MIRROR_SIGN, Leg, mirror


def test_mass_matrix_symmetric_positive_definite(params):
    for r in check_mass_matrix(params, n=100):
        assert r.passed, r.line()


def test_passive_energy_conserved(params):
    (r,) = check_energy(params)
    assert r.passed, r.line()


def test_kinematic_jacobians_match_finite_differences(params):
    (r,) = check_jacobians(params)
    assert r.passed, r.line()


def test_stance_leg_mirror_symmetry(params, rng):
    # leg-2 stance dynamics are the mirror image of leg-1 stance dynamics
    S = np.diag(MIRROR_SIGN)
    for q in random_states(5, rng)[0]:
        D1 = model.mass_matrix(q, params, Leg.LEG1)
        D2 = model.mass_matrix(mirror(q), params, Leg.LEG2)
        assert np.allclose(S @ D1 @ S, D2, atol=1e-12)
        p1 = model.swing_foot_position(q, params, Leg.LEG1)
        p2 = model.swing_foot_position(mirror(q), params, Leg.LEG2)
        assert np.allclose(p1 * [1, -1, 1], p2, atol=1e-12)


def test_forward_dynamics_solves_lagrange_equation(params, rng):
    q, dq = random_states(1, rng)
    q, dq = q[0], dq[0]
    u = rng.normal(size=6)
    ddq = model.forward_dynamics(q, dq, u, params)
    D = model.mass_matrix(q, params)
    H = model.bias_vector(q, dq, params)
    assert np.allclose(D @ ddq + H, model.B @ u, atol=1e-10)


def test_ground_reaction_balances_static_weight(params):
    # at rest, the stance foot carries the full weight
    F = model.ground_reaction(NOMINAL_Q, np.zeros(8), np.zeros(8), params)
    assert F[2] == pytest.approx(params.total_mass * params.g, rel=1e-12)
    assert np.allclose(F[:2], 0.0, atol=1e-10)


def test_com_is_mass_weighted_mean(params):
    pts = model.mass_positions(NOMINAL_Q, params)
    m = np.array([params.m1, params.m2, params.m3, params.m2, params.m1])
    com = model.center_of_mass(NOMINAL_Q, params)
    assert np.allclose(com, m @ pts / m.sum(), atol=1e-12)
