import numpy as np
import pytest

from biped3d import model
from biped3d.errors import InvalidChain
from biped3d.gaits import REFERENCE_FINAL_STATES
from biped3d.optimizer import (FREE, OptimizationProblem, close_chain, decode, encode, evaluate, make_periodic,
                               optimize, periodicity_residual)


def test_close_chain_puts_swing_foot_on_ground_ahead(params):
    qf, _ = REFERENCE_FINAL_STATES["torque"]
    q = close_chain(np.asarray(qf)[list(FREE)], params, hint=qf[1])
    foot = model.swing_foot_position(q, params)
    assert abs(foot[2]) < 1e-12 and foot[0] > 0
    assert q[1] == pytest.approx(qf[1], abs=2e-3)


def test_close_chain_rejects_impossible_posture(params):
    # straight parallel legs only touch down directly beside the stance foot
    with pytest.raises(InvalidChain):
        close_chain(np.zeros(7), params)


def test_decode_builds_consistent_gait(torque_gait, params):
    x = np.asarray(torque_gait.meta["decision_vector"])
    d = decode(x, params, hint=torque_gait.qf[1]).design
    assert np.allclose(d.qi, torque_gait.qi, atol=1e-12)
    assert np.allclose(d.alpha, torque_gait.alpha, atol=1e-12)
    assert np.allclose(encode(d.qf, d.dqf), x)


def test_make_periodic_closes_rounded_state(params):
    qf, dqf = REFERENCE_FINAL_STATES["torque"]
    x0 = encode(qf, dqf)
    assert np.max(np.abs(periodicity_residual(x0, params, hint=qf[1]))) > 1e-5
    x = make_periodic(x0, params, hint=qf[1])
    assert np.max(np.abs(periodicity_residual(x, params, hint=qf[1]))) < 1e-9
    assert np.linalg.norm(x - x0) < 0.05


def test_evaluate_torque_gait_is_feasible(torque_gait, params):
    x = np.asarray(torque_gait.meta["decision_vector"])
    ev = evaluate(x, OptimizationProblem(chart_hint=torque_gait.qf[1]), params)
    assert ev.feasible()
    assert ev.L == pytest.approx(torque_gait.meta["L"], rel=1e-9)
    assert ev.speed == pytest.approx(0.45, rel=0.02)


def test_problem_validation():
    with pytest.raises(ValueError):
        OptimizationProblem(criterion="speed")
    with pytest.raises(ValueError):
        OptimizationProblem(mu=0.0)


@pytest.mark.slow
def test_torque_optimizer_improves_from_perturbed_seed(torque_gait, params):
    x = np.asarray(torque_gait.meta["decision_vector"]).copy()
    x[7:] += 0.05
    pr = OptimizationProblem(chart_hint=torque_gait.qf[1], max_iter=1)
    xs, ev, report = optimize(x, pr, params)
    assert ev.feasible(pr.eq_tol, pr.ineq_tol)
    assert report["final"]["J"] <= report["history"][0]["J"] + 1e-9
