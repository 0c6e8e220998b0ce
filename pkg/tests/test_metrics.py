import math

import numpy as np
import pytest

from demo_ease import agent, env, metrics, robot
from demo_ease.agent import TrainConfig
from demo_ease.env import EnvParams, EpisodeConfig, TaskKind
from demo_ease.errors import CheckpointError
from demo_ease.metrics import CurveTooShort


def ddpg_row_curve(n=250):
    k = math.ceil(0.1 * n)
    mid = np.linspace(-0.56, 0.32, n - 2 * k + 2)[1:-1]
    return np.concatenate([np.full(k, -0.56), mid, np.full(k, 0.32)])


def test_reproduces_ddpg_row():
    m = metrics.training_metrics(ddpg_row_curve())
    assert (m.R10, m.R90) == (-0.56, 0.32)
    assert m.IR == pytest.approx(0.88, abs=1e-15)


def test_constant_curve():
    m = metrics.training_metrics(np.full(40, 2.0))
    assert (m.R10, m.R90, m.IR, m.T50) == (2.0, 2.0, 0.0, 1)


def test_linear_ramp():
    m = metrics.training_metrics(np.arange(100, dtype=float))
    assert (m.R10, m.R90, m.IR) == (4.5, 94.5, 90.0)
    # smoothed value at 1-based episode i > 50 is i - 25.5; first to exceed 47.25 is 73
    assert m.T50 == 73


def test_ceil_of_ten_percent():
    r = np.arange(15, dtype=float)
    m = metrics.training_metrics(r)
    assert m.R10 == 0.5 and m.R90 == 13.5


def test_t50_none_when_never_reached():
    r = np.concatenate([np.zeros(90), np.full(10, 10.0)])
    assert metrics.training_metrics(r, window=1000).T50 is None


def test_curve_too_short():
    with pytest.raises(CurveTooShort):
        metrics.training_metrics(np.zeros(9))


def test_moving_average_is_trailing():
    np.testing.assert_allclose(metrics.moving_average([1, 2, 3, 4], window=2), [1, 1.5, 2.5, 3.5])


def fixed_trial(monkeypatch, config):
    monkeypatch.setattr(metrics, "sample_episode", lambda *a, **k: config)


MODEL = robot.RobotModel()
Q0 = np.array([0.3, 0.4, -0.6, 0.2])


def zero_policy(obs):
    return np.zeros(4)


def test_single_timeout_trial_by_hand(monkeypatch):
    goal = robot.forward_kinematics(MODEL, Q0).end + np.array([0.1, 0.0, 0.0])
    fixed_trial(monkeypatch, EpisodeConfig(Q0, goal))
    params = EnvParams(n_tau=4)
    # at rest the torque estimate is gravity over the torque limits
    tau = np.linalg.norm(np.abs(robot.gravity_torques(MODEL, Q0)) / np.array(MODEL.tau_max))
    rep = metrics.evaluate(zero_policy, TaskKind.P2P, n_trials=1, params=params)
    t = rep.trials[0]
    assert (t.cause, t.success, t.steps) == ("timeout", False, 4)
    assert t.ret == pytest.approx(4 * (-2e-3 * 0.1 - 1e-3 * tau), abs=1e-12)
    assert t.final_error == pytest.approx(0.1, abs=1e-12)
    assert rep.p_scs == 0.0 and rep.r_test is None and rep.e95 is None
    assert rep.t_eff == pytest.approx(4 * tau / 4, abs=1e-12)


def test_single_success_trial_by_hand(monkeypatch):
    fixed_trial(monkeypatch, EpisodeConfig(Q0, robot.forward_kinematics(MODEL, Q0).end))
    tau = np.linalg.norm(np.abs(robot.gravity_torques(MODEL, Q0)) / np.array(MODEL.tau_max))
    rep = metrics.evaluate(zero_policy, TaskKind.P2P, n_trials=1, params=EnvParams(n_tau=20))
    assert rep.trials[0].cause == "reached" and rep.trials[0].steps == 1
    assert rep.p_scs == 1.0 and rep.n_success == 1
    assert rep.r_test == pytest.approx(10.0 - 1e-3 * tau, abs=1e-12)
    assert rep.e95 == pytest.approx(0.0, abs=1e-12)
    assert rep.t_eff == pytest.approx(tau / 20, abs=1e-12)
    assert rep.t_eff_per_step == pytest.approx(tau, abs=1e-12)
    assert rep.e95_ntau is None  # the trial ended before 95% of the horizon


def test_e95_window_uses_executed_length():
    rec = metrics.TrialRecord(0, "Reached", True, 40, 0.0, 0.0, 0.0, 0.0, list(np.arange(40.0)))
    rep = metrics.summarize([rec], n_tau=40)
    # steps 38..40 (1-based) lie at or past ceil(0.95 * 40) = 38
    assert rep.e95_ntau == pytest.approx(np.mean([37.0, 38.0, 39.0]))


def test_evaluation_order_invariance():
    rng = np.random.default_rng(0)
    net = agent.make_agent(22, 4, 1.0, TrainConfig(actor_hidden=(8,), critic_hidden=(8,)), rng).actor
    params = EnvParams(n_tau=30)
    trials = [metrics.run_trial(net.forward, TaskKind.P2P, i, 3, params) for i in range(6)]
    a = metrics.summarize(trials, params.n_tau)
    b = metrics.summarize(trials[::-1], params.n_tau)
    assert a.to_json() == b.to_json()
    assert a.to_json() == metrics.evaluate(net.forward, TaskKind.P2P, 6, 3, params).to_json()


def test_trial_independent_of_count():
    params = EnvParams(n_tau=10)
    a = metrics.evaluate(zero_policy, TaskKind.P2P, 3, 1, params).trials
    b = metrics.evaluate(zero_policy, TaskKind.P2P, 5, 1, params).trials[:3]
    assert [t.ret for t in a] == [t.ret for t in b]


def test_all_collisions_give_zero_success(monkeypatch):
    pose = robot.forward_kinematics(MODEL, Q0)
    # obstacle centred on the end-effector
    fixed_trial(monkeypatch, EpisodeConfig(Q0, pose.end + 0.2, pose.end.copy()))
    rep = metrics.evaluate(zero_policy, TaskKind.P2PO, n_trials=5)
    assert all(t.cause == "collision" for t in rep.trials)
    assert rep.p_scs == 0.0 and rep.r_test is None


def test_report_csv(tmp_path, monkeypatch):
    fixed_trial(monkeypatch, EpisodeConfig(Q0, robot.forward_kinematics(MODEL, Q0).end))
    rep = metrics.evaluate(zero_policy, TaskKind.P2P, n_trials=2, params=EnvParams(n_tau=5))
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("trial,cause") and len(lines) == 3


def test_evaluate_checkpoint_rejects_wrong_task(tmp_path):
    a = agent.make_agent(22, 4, 1.0, TrainConfig(actor_hidden=(4,), critic_hidden=(4,)), np.random.default_rng(0))
    path = tmp_path / "a.dezc"
    agent.save_agent(path, a)
    with pytest.raises(CheckpointError):
        metrics.evaluate_checkpoint(path, TaskKind.P2PO, n_trials=1)
    rep = metrics.evaluate_checkpoint(path, TaskKind.P2P, n_trials=1, params=EnvParams(n_tau=5))
    assert rep.n_trials == 1


def test_evaluate_checkpoint_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        metrics.evaluate_checkpoint(tmp_path / "nope.dezc", TaskKind.P2P)
