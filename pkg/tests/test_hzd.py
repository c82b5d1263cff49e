import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from biped3d import hzd
from biped3d.errors import RiccatiDivergence
from biped3d.hzd import StabilityReport
from biped3d.simulator import HZDCorrected, SimConfig, simulate_step

# regression values for the bundled torque-optimal gait (computed once, frozen)
TORQUE_EIGS = np.array([-1.835735, 0.814462, -0.572596])
TORQUE_CLOSED_LOOP = np.array([0.708921, -0.486473 + 0.131401j, -0.486473 - 0.131401j])
FRONTAL_EIGS_ABS = np.array([0.693304, 0.392729, 0.392729])


@pytest.mark.parametrize("name", ["torque", "stability", "torque-frontal"])
def test_bundled_gaits_are_fixed_points(name, params):
    from biped3d.gaits import load_bundled

    assert np.max(np.abs(hzd.fixed_point_residual(load_bundled(name), params))) < 1e-7


def test_torque_gait_eigenvalues_regression(torque_report):
    assert np.allclose(torque_report.eigenvalues, TORQUE_EIGS, atol=1e-4)
    assert torque_report.verdict == "UNSTABLE"


def test_frontal_output_eigenvalues_regression(frontal_gait, params):
    rep = hzd.linearize(frontal_gait, params)
    assert np.allclose(np.abs(rep.eigenvalues), FRONTAL_EIGS_ABS, atol=1e-4)
    assert rep.stable


def test_az_richardson_stable_under_step_halving(torque_gait, params, torque_report):
    half = hzd.linearize(torque_gait, params, np.array(hzd.DEFAULT_PERTURBATION) / 2)
    rel = np.abs(half.Az - torque_report.Az) / np.maximum(np.abs(torque_report.Az), 1e-3)
    assert np.max(rel) < 0.01


def test_dlqr_matches_riccati_solution(torque_report):
    A, F = torque_report.Az, torque_report.F
    K = hzd.dlqr(A, F, 2.0)
    P = solve_discrete_are(A, F, np.eye(3), 2.0 * np.eye(6))
    K_ref = np.linalg.solve(2.0 * np.eye(6) + F.T @ P @ F, F.T @ P @ A)
    assert np.allclose(K, K_ref, atol=1e-8)
    assert hzd.riccati_residual(A, F, 2.0, K) < 1e-8
    assert np.allclose(hzd.sorted_eigenvalues(A - F @ K), TORQUE_CLOSED_LOOP, atol=1e-4)


def test_dlqr_rejects_unstabilizable_pair():
    with pytest.raises(RiccatiDivergence):
        hzd.dlqr(np.diag([2.0, 0.5, 0.5]), np.vstack([np.zeros((1, 6)), np.ones((2, 6))]), 2.0)


def test_closed_loop_map_matches_linear_prediction(torque_gait, params, torque_report):
    K = hzd.dlqr(torque_report.Az, torque_report.F, 2.0)
    cl = hzd.linearize_closed_loop(torque_gait, params, K)
    assert cl.stable
    assert np.allclose(cl.Az, torque_report.Az - torque_report.F @ K, atol=5e-3)


def test_stability_report_round_trip(torque_report, tmp_path):
    p = torque_report.save(tmp_path / "r.json")
    import json

    r = StabilityReport.from_dict(json.loads(p.read_text()))
    assert np.allclose(r.Az, torque_report.Az) and np.allclose(r.eigenvalues, torque_report.eigenvalues)
    assert r.verdict == torque_report.verdict


def test_full_model_tracks_reduced_model_on_zero_dynamics(torque_gait, params):
    g = torque_gait
    ctl = HZDCorrected(g)
    rec, *_ = simulate_step(g.qi, g.dqi, ctl, params, SimConfig(samples_per_step=60))
    zd = hzd.nominal_orbit(g, params)
    ref = zd.state_at(rec.t).T
    full = np.column_stack([rec.q[:, 0], rec.theta, rec.dq[:, 0], -rec.dq[:, 1] - 0.5 * rec.dq[:, 2]])
    assert np.max(np.abs(full - ref)) < 1e-5
    assert rec.T == pytest.approx(zd.T, abs=1e-6)


def test_hzd_invariance_after_perturbed_impacts(torque_gait, params, torque_report):
    # event control keeps the (unstable) gait walking; the correction zeroes y at every step start
    from biped3d.simulator import EventDLQR, perturbed_start, simulate_walk

    K = hzd.dlqr(torque_report.Az, torque_report.F, 2.0)
    q, dq = perturbed_start(torque_gait, -1.0, -5.0)
    recs = simulate_walk(q, dq, EventDLQR(torque_gait, K), 4, params)
    assert max(r.y_start for r in recs) < 1e-10
