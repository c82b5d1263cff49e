import numpy as np
import pytest

from biped3d import constraints as C
from biped3d.errors import DegeneratePhaseInterval, ZeroPhaseRate
from biped3d.frames import theta_of


def test_bezier_matches_boundary_values_and_slopes(rng):
    qi, dqi, qf, dqf = (rng.normal(size=6) for _ in range(4))
    th_i, th_f, w_i, w_f = 0.2, 0.55, 0.9, 1.3
    b = C.bezier_from_boundary(qi, dqi, qf, dqf, th_i, th_f, w_i, w_f)
    assert np.allclose(b(th_i, th_i, th_f), qi)
    assert np.allclose(b(th_f, th_i, th_f), qf)
    h = 1e-6
    slope_i = (b(th_i + h, th_i, th_f) - b(th_i, th_i, th_f)) / h
    slope_f = (b(th_f, th_i, th_f) - b(th_f - h, th_i, th_f)) / h
    assert np.allclose(slope_i, dqi / w_i, atol=1e-4)
    assert np.allclose(slope_f, dqf / w_f, atol=1e-4)


def test_bezier_rejects_degenerate_inputs():
    z = np.zeros(6)
    with pytest.raises(DegeneratePhaseInterval):
        C.bezier_from_boundary(z, z, z, z, 0.3, 0.3, 1.0, 1.0)
    with pytest.raises(ZeroPhaseRate):
        C.bezier_from_boundary(z, z, z, z, 0.0, 0.3, 0.0, 1.0)


def test_stride_correction_boundary_conditions(rng):
    y, dy = rng.normal(size=6), rng.normal(size=6)
    th_i, th_f, w = 0.1, 0.5, 1.2
    hc = C.correction_coeffs(y, dy, th_i, th_f, w)
    tm = 0.5 * (th_i + th_f)
    assert np.allclose(hc(th_i), y)
    assert np.allclose(hc.derivative(th_i), dy / w)
    assert np.allclose(hc.derivative(th_i, 2), 0.0, atol=1e-9)
    for k in range(3):
        assert np.allclose(hc.derivative(tm, k), 0.0, atol=1e-8)
    assert np.allclose(hc(th_f), 0.0) and np.allclose(hc(0.45), 0.0)


def test_event_term_boundary_conditions(rng):
    beta = rng.normal(size=6)
    th_i, th_f = 0.1, 0.5
    hs = C.event_term_coeffs(beta, th_i, th_f)
    te = th_i + 0.9 * (th_f - th_i)
    for k in range(3):
        assert np.allclose(hs.derivative(th_i, k), 0.0, atol=1e-8)
        assert np.allclose(hs.derivative(te, k), 0.0, atol=1e-7)
    assert np.allclose(hs(0.5 * (th_i + th_f)), beta)
    assert np.allclose(hs(th_f), 0.0)


def test_selection_from_q_coeffs_acts_on_q(rng):
    c = rng.normal(size=8)
    M = C.selection_from_q_coeffs(C.default_selection(), 3, c)
    q = rng.normal(size=8)
    z = np.r_[q[0], theta_of(q), q[2:]]
    assert M[3] @ z == pytest.approx(c @ q, abs=1e-12)
    assert np.allclose(M[[0, 1, 2, 4, 5]], C.default_selection()[[0, 1, 2, 4, 5]])


def test_output_vanishes_on_nominal_boundary_states(torque_gait):
    g = torque_gait
    for q, dq in ((g.qi, g.dqi), (g.qf, g.dqf)):
        y, dy, _ = C.output(q, dq, g)
        assert np.max(np.abs(y)) < 1e-10 and np.max(np.abs(dy)) < 1e-9


def test_output_jacobian_matches_finite_differences(torque_gait, frontal_gait, rng):
    for g in (torque_gait, frontal_gait):
        q = g.qi + 0.05 * rng.normal(size=8)
        dq = rng.normal(size=8)
        _, dy, Jy = C.output(q, dq, g)
        h = 1e-6
        Jfd = np.column_stack([(C.output(q + e, dq, g)[0] - C.output(q - e, dq, g)[0]) / (2 * h)
                               for e in np.eye(8) * h])
        assert np.max(np.abs(Jy - Jfd)) < 1e-6
        assert np.allclose(dy, Jy @ dq, atol=1e-12)


def test_stride_correction_zeroes_output_of_any_start_state(torque_gait, rng):
    g = torque_gait
    q, dq = g.qi + np.deg2rad(1.0) * rng.normal(size=8), g.dqi + 0.1 * rng.normal(size=8)
    hc = C.stride_correction_for(q, dq, g)
    y, dy, _ = C.output(q, dq, g, correction=hc)
    assert np.linalg.norm(y) < 1e-10 and np.linalg.norm(dy) < 1e-9


def test_reduced_coordinates_round_trip(torque_gait):
    g = torque_gait
    th = 0.5 * (g.theta_i + g.theta_f)
    q = C.q_from_reduced(0.01, th, g)
    assert q[0] == pytest.approx(0.01) and theta_of(q) == pytest.approx(th, abs=1e-12)
    assert np.linalg.norm(C.output(q, np.zeros(8), g)[0]) < 1e-12


def test_gait_file_round_trip(torque_gait, frontal_gait, tmp_path):
    for g in (torque_gait, frontal_gait):
        p = g.save(tmp_path / "g.json")
        h = C.GaitDesign.load(p)
        for k in ("alpha", "qf", "dqf", "qi", "dqi", "M"):
            assert np.array_equal(getattr(g, k), getattr(h, k))
        assert h.is_default_selection == g.is_default_selection
        if g.q1_knots is not None:
            th = np.linspace(g.theta_i, g.theta_f, 7)
            assert np.allclose(g.q1_star(th), h.q1_star(th), atol=1e-14)
