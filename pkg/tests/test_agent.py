import numpy as np
import pytest

from demo_ease import agent, nn
from demo_ease.agent import EmptyBatch, TrainConfig
from demo_ease.env import EnvParams, TaskKind
from demo_ease.errors import CheckpointError
from demo_ease.replay import Batch, ReplayBuffer

TINY = TrainConfig(actor_hidden=(6,), critic_hidden=(7, 5))


def tiny_agent(obs_dim=3, act_dim=2, seed=0, config=TINY):
    return agent.make_agent(obs_dim, act_dim, 1.0, config, np.random.default_rng(seed))


def zero_net(net):
    for p in net.params:
        p[:] = 0.0


def random_batch(rng, n=6, obs_dim=3, act_dim=2):
    return Batch(rng.normal(size=(n, obs_dim)), rng.uniform(-1, 1, (n, act_dim)), rng.normal(size=n),
                 rng.normal(size=(n, obs_dim)), (rng.random(n) < 0.3).astype(float))


def fd(net, loss_fn, h=1e-6):
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp = loss_fn()
            p[idx] = old - h
            lm = loss_fn()
            p[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out.append(g)
    return out


def assert_grads_close(grads, num, tol=1e-4):
    for g, n in zip(grads, num):
        assert np.max(np.abs(g - n) / np.maximum(1e-6, np.abs(g) + np.abs(n))) < tol


def test_targets_start_as_copies():
    p = tiny_agent()
    for a, b in zip(p.actor.params + p.critic.params, p.target_actor.params + p.target_critic.params):
        assert a.tobytes() == b.tobytes() and a is not b


def test_act_without_noise_is_policy():
    p = tiny_agent()
    s = np.ones(3)
    assert agent.act(p.actor, s, 0.0).tobytes() == p.actor(s).tobytes()


def test_act_noise_statistics():
    p = tiny_agent()
    s = np.array([0.2, -0.1, 0.3])
    rng = np.random.default_rng(1)
    draws = np.array([agent.act(p.actor, s, 0.1, rng) for _ in range(10_000)])
    assert np.all(np.abs(draws.mean(axis=0) - p.actor(s)) < 3 * 0.1 / 100)
    assert np.all(np.abs(draws) <= 1.0)


def test_act_rejects_negative_sigma():
    with pytest.raises(ValueError):
        agent.act(tiny_agent().actor, np.ones(3), -0.1)


def test_critic_loss_terminal_transition():
    p = tiny_agent()
    zero_net(p.critic)
    b = Batch(np.zeros((1, 3)), np.zeros((1, 2)), np.array([1.0]), np.zeros((1, 3)), np.array([1.0]))
    assert agent.critic_loss(b, p, 0.99)[0] == 1.0


def test_critic_loss_zero_networks():
    p = tiny_agent()
    zero_net(p.critic)
    zero_net(p.target_critic)
    b = random_batch(np.random.default_rng(2))
    assert agent.critic_loss(b, p, 0.7)[0] == pytest.approx(np.mean(b.r**2))


def test_critic_loss_matches_scalar_pipeline():
    rng = np.random.default_rng(3)
    p = tiny_agent()
    b = random_batch(rng)
    loss, _ = agent.critic_loss(b, p, 0.9)
    total = 0.0
    for s, a, r, sn, z in zip(*b):
        an = p.target_actor(sn)
        y = r + 0.9 * (1 - z) * p.target_critic(np.concatenate([sn, an]))[0]
        total += (y - p.critic(np.concatenate([s, a]))[0]) ** 2
    assert loss == pytest.approx(total / len(b.r), rel=1e-12)


def test_critic_gradients():
    rng = np.random.default_rng(4)
    p = tiny_agent()
    b = random_batch(rng)
    _, grads = agent.critic_loss(b, p, 0.9)
    assert_grads_close(grads, fd(p.critic, lambda: agent.critic_loss(b, p, 0.9)[0]))


def test_critic_loss_empty_batch():
    p = tiny_agent()
    empty = Batch(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(EmptyBatch):
        agent.critic_loss(empty, p, 0.9)
    with pytest.raises(EmptyBatch):
        agent.actor_loss(np.zeros((0, 3)), None, p, 1.0)


class FixedCritic:
    """Stand-in critic returning preset values for (state, action) rows."""

    def __init__(self, fn):
        self.fn = fn

    def forward(self, x):
        return self.fn(x)[:, None]


def test_q_filter_strict_inequality():
    s = np.zeros((2, 1))
    a_d = np.array([[1.0], [1.0]])
    a_hat = np.array([[0.0], [1.0]])
    # Q = 1.2 for the policy action, 3.4 for the demo action, equal in row 2
    critic = FixedCritic(lambda x: np.where(x[:, 1] == 1.0, 3.4, 1.2))
    np.testing.assert_array_equal(agent.q_filter_mask(critic, s, a_d, a_hat), [1.0, 0.0])


def test_constant_critic_masks_everything():
    p = tiny_agent()
    zero_net(p.critic)
    p.critic.params[-1][:] = 2.5
    rng = np.random.default_rng(5)
    s_d, a_d = rng.normal(size=(8, 3)), rng.uniform(-1, 1, (8, 2))
    info, grads = agent.actor_loss(rng.normal(size=(4, 3)), (s_d, a_d), p, 1.0)
    assert info.bc_loss == 0.0 and info.mask_rate == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_actor_loss_substitution_example(monkeypatch):
    p = agent.make_agent(1, 4, 1.0, TrainConfig(actor_hidden=(3,), critic_hidden=(3,)), np.random.default_rng(0))
    zero_net(p.actor)
    p.actor.params[-1][0] = np.arctanh(0.1)  # pi(s) = (0.1, 0, 0, 0)
    zero_net(p.critic)
    # Q = 0 everywhere would tie, so the mask is forced to 1 for this example
    monkeypatch.setattr(agent, "q_filter_mask", lambda critic, s_d, a_d, a_hat: np.ones(len(s_d)))
    info, _ = agent.actor_loss(np.zeros((1, 1)), (np.zeros((1, 1)), np.array([[0.5, 0, 0, 0]])), p, 1.0)
    assert info.loss == pytest.approx(0.16)
    assert info.original_loss == 0.0


def test_actor_loss_gradients_composite():
    rng = np.random.default_rng(6)
    p = tiny_agent()
    s_o = rng.normal(size=(5, 3))
    s_d = rng.normal(size=(7, 3))
    a_d = rng.uniform(-1, 1, (7, 2))
    info, grads = agent.actor_loss(s_o, (s_d, a_d), p, 0.8)
    mask = agent.q_filter_mask(p.critic, s_d, a_d, p.actor(s_d))
    assert 0 < mask.mean() < 1 and info.mask_rate == mask.mean()

    def loss():
        # the mask is held fixed, matching its stop-gradient treatment
        a = p.actor(s_o)
        lo = -np.mean(p.critic(np.concatenate([s_o, a], axis=1)))
        return lo + 0.8 * np.mean(mask * np.sum((a_d - p.actor(s_d)) ** 2, axis=1))

    assert info.loss == pytest.approx(loss(), rel=1e-12)
    assert_grads_close(grads, fd(p.actor, loss))


def test_lambda_zero_equals_ddpg_loss():
    rng = np.random.default_rng(7)
    p = tiny_agent()
    s_o = rng.normal(size=(5, 3))
    demo = (rng.normal(size=(4, 3)), rng.uniform(-1, 1, (4, 2)))
    a, ga = agent.actor_loss(s_o, demo, p, 0.0)
    b, gb = agent.ddpg_actor_loss(s_o, p)
    assert a.loss == b.loss
    assert all(x.tobytes() == y.tobytes() for x, y in zip(ga, gb))


def test_empty_demo_batch_drops_bc():
    rng = np.random.default_rng(8)
    p = tiny_agent()
    s_o = rng.normal(size=(5, 3))
    a, _ = agent.actor_loss(s_o, (np.zeros((0, 3)), np.zeros((0, 2))), p, 1.0)
    assert a.bc_loss == 0.0 and a.loss == agent.ddpg_actor_loss(s_o, p)[0].loss


def test_update_order_and_isolation():
    rng = np.random.default_rng(9)
    p = tiny_agent()
    b = random_batch(rng)
    actor_before = [x.copy() for x in p.actor.params]
    _, grads = agent.critic_loss(b, p, 0.9)
    nn.adam_step(p.critic.params, grads, p.critic_opt)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(actor_before, p.actor.params))
    critic_before = [x.copy() for x in p.critic.params]
    _, grads = agent.actor_loss(b.s, None, p, 1.0)
    nn.adam_step(p.actor.params, grads, p.actor_opt)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(critic_before, p.critic.params))


def test_update_moves_targets_by_polyak():
    rng = np.random.default_rng(10)
    p = tiny_agent()
    old_target = [x.copy() for x in p.target_critic.params]
    agent.update(p, random_batch(rng), None, TINY)
    for t, o, c in zip(p.target_critic.params, old_target, p.critic.params):
        np.testing.assert_allclose(t, 0.995 * o + 0.005 * c, atol=1e-15)


def test_gamma_zero_fixed_point_is_regression():
    """With gamma = 0 a linear critic converges to the least-squares fit."""
    cfg = TrainConfig(actor_hidden=(2,), critic_hidden=(), lr_critic=0.01)
    p = agent.make_agent(1, 1, 1.0, cfg, np.random.default_rng(0))
    s = np.array([[0.1], [0.5], [-0.4]])
    a = np.array([[0.3], [-0.2], [0.6]])
    r = np.array([1.0, -0.5, 0.25])
    batch = Batch(s, a, r, s, np.zeros(3))
    for _ in range(20_000):
        _, g = agent.critic_loss(batch, p, 0.0)
        nn.adam_step(p.critic.params, g, p.critic_opt)
    X = np.column_stack([s, a, np.ones(3)])
    w = np.linalg.lstsq(X, r, rcond=None)[0]
    np.testing.assert_allclose(p.critic(np.column_stack([s, a]))[:, 0], X @ w, atol=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=0.0)
    with pytest.raises(ValueError):
        TrainConfig(n_up=0)
    with pytest.raises(ValueError):
        TrainConfig(update_granularity="hours")


SMALL = dict(n_tau=20, n_ep=2, episodes_per_epoch=3, n_up=5, batch_o=16, batch_d=16, start_steps=30,
             update_after=20, actor_hidden=(8,), critic_hidden=(8,))


def run_small(use_bc=True, n_demo=0, seed=3, **kw):
    from demo_ease.demo import record_demos

    cfg = TrainConfig(**{**SMALL, **kw}, seed=seed)
    bo = ReplayBuffer(22)
    bd = ReplayBuffer(22, capacity=10_000, evict=False)
    if n_demo:
        record_demos(TaskKind.P2P, n_demo, bo, bd, np.random.default_rng(seed))
    return agent.train(cfg, TaskKind.P2P, bo, bd if n_demo else None, EnvParams(), use_bc=use_bc)


def test_baseline_reduction_matches_ddpg_path():
    _, a = run_small(use_bc=True, lambda_bc=0.0)
    _, b = run_small(use_bc=False, lambda_bc=0.0)
    assert [l.row() for l in a] == [l.row() for l in b]


def test_training_is_deterministic():
    _, a = run_small(n_demo=2, lambda_bc=1.0)
    _, b = run_small(n_demo=2, lambda_bc=1.0)
    assert [l.row() for l in a] == [l.row() for l in b]
    assert any(l.bc_loss == l.bc_loss for l in a)  # some updates ran


def test_episode_granularity_runs():
    _, logs = run_small(update_granularity="episodes", n_up=2, update_after=0)
    assert len(logs) == 6


def test_checkpoint_each_epoch_and_resume(tmp_path):
    saved = []
    cfg = TrainConfig(**SMALL, seed=4)

    def sink(params, state):
        path = tmp_path / f"e{state.epoch}.dezc"
        agent.save_agent(path, params, agent.checkpoint_meta(cfg, state, TaskKind.P2P))
        saved.append(path)

    bo = ReplayBuffer(22)
    _, logs = agent.train(cfg, TaskKind.P2P, bo, None, EnvParams(), checkpoint_sink=sink)
    assert len(saved) == cfg.n_ep
    params, meta = agent.load_agent(saved[0])
    assert meta["state"]["epoch"] == 1 and meta["task"] == "p2p"
    state = agent.TrainingState(**meta["state"])
    _, more = agent.train(cfg, TaskKind.P2P, bo, None, EnvParams(), resume=(params, state))
    assert [l.episode for l in more] == [l.episode for l in logs[cfg.episodes_per_epoch:]]


def test_load_agent_wraps_errors(tmp_path):
    bad = tmp_path / "bad.dezc"
    bad.write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        agent.load_agent(bad)
    with pytest.raises(CheckpointError):
        agent.load_agent(tmp_path / "missing.dezc")
