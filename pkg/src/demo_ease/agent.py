"""DDPG actor-critic with a Q-filtered behaviour-cloning term and the
training loop that mixes demonstrations into the replay stream."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nn
from .env import EnvParams, ReachEnv, Stage, TaskKind, sample_episode, sector_index
from .errors import CheckpointError
from .nn import Adam, Mlp, adam_step, polyak_update
from .replay import Batch, ReplayBuffer, Transition


class EmptyBatch(ValueError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.99
    sigma: float = 0.1
    lambda_bc: float = 1.0
    n_demos: int = 80
    n_ep: int = 250
    episodes_per_epoch: int = 10
    n_up: int = 20
    n_tau: int = 400
    batch_o: int = 100
    batch_d: int = 100
    buffer_o: int = 1_000_000
    omega: float = 0.995
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    actor_hidden: tuple = (128, 512, 128)
    critic_hidden: tuple = (256, 1024, 256)
    update_granularity: str = "steps"
    # uniform-random actions for the first start_steps environment steps, and
    # no updates before update_after steps of own experience
    start_steps: int = 10_000
    update_after: int = 1_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.lambda_bc < 0:
            raise ValueError("lambda_bc must be >= 0")
        for name in ("n_demos", "n_ep", "episodes_per_epoch", "n_up", "n_tau", "batch_o", "batch_d", "buffer_o",
                     "start_steps", "update_after"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("n_up", "n_tau", "batch_o", "batch_d", "buffer_o"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if self.update_granularity not in ("steps", "episodes"):
            raise ValueError("update_granularity must be 'steps' or 'episodes'")
        self.actor_hidden = tuple(int(n) for n in self.actor_hidden)
        self.critic_hidden = tuple(int(n) for n in self.critic_hidden)


@dataclass
class AgentParams:
    actor: Mlp
    critic: Mlp
    target_actor: Mlp
    target_critic: Mlp
    actor_opt: Adam
    critic_opt: Adam

    @property
    def act_dim(self) -> int:
        return self.actor.out_dim

    @property
    def obs_dim(self) -> int:
        return self.actor.in_dim


def make_agent(obs_dim: int, act_dim: int, vel_limit: float, config: TrainConfig, rng) -> AgentParams:
    actor = Mlp([obs_dim, *config.actor_hidden, act_dim], nn.TANH, vel_limit, rng, final_scale=0.1)
    critic = Mlp([obs_dim + act_dim, *config.critic_hidden, 1], nn.IDENTITY, 1.0, rng)
    return AgentParams(
        actor,
        critic,
        actor.copy(),
        critic.copy(),
        Adam.for_net(actor, config.lr_actor),
        Adam.for_net(critic, config.lr_critic),
    )


def act(actor: Mlp, s, sigma: float, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Policy action plus Gaussian exploration, clipped to the velocity limit."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    a = actor.forward(s)
    if sigma == 0:
        return a
    a = a + sigma * rng.standard_normal(a.shape)
    return np.clip(a, -actor.output_scale, actor.output_scale)


def _q(critic: Mlp, s, a, cached=False):
    x = np.concatenate([s, a], axis=-1)
    return critic.forward_cached(x) if cached else critic.forward(x)


def critic_loss(batch: Batch, params: AgentParams, gamma: float):
    """Mean squared TD error on the stored actions and its critic gradient."""
    n = len(batch.r)
    if n == 0:
        raise EmptyBatch("critic loss needs at least one transition")
    a_next = params.target_actor.forward(batch.s_next)
    q_next = _q(params.target_critic, batch.s_next, a_next)[:, 0]
    y = batch.r + gamma * (1.0 - batch.zeta) * q_next
    x = np.concatenate([batch.s, batch.a], axis=1)
    q, cache = params.critic.forward_cached(x)
    td = y - q[:, 0]
    loss = float(np.mean(td**2))
    grads, _ = params.critic.backward(x, (-2.0 / n * td)[:, None], cache)
    return loss, grads


def q_filter_mask(critic: Mlp, s_d, a_d, a_hat) -> np.ndarray:
    """1 where the critic rates the demonstrated action strictly higher."""
    q_hat = _q(critic, s_d, a_hat)[..., 0]
    q_demo = _q(critic, s_d, a_d)[..., 0]
    return (q_hat < q_demo).astype(float)


@dataclass
class ActorLossInfo:
    loss: float
    original_loss: float
    bc_loss: float
    mask_rate: float


def _original_term(s, params: AgentParams):
    n = len(s)
    if n == 0:
        raise EmptyBatch("actor loss needs at least one transition")
    a, actor_cache = params.actor.forward_cached(s)
    x = np.concatenate([s, a], axis=1)
    q, critic_cache = params.critic.forward_cached(x)
    loss = -float(np.mean(q))
    _, dx = params.critic.backward(x, np.full_like(q, -1.0 / n), critic_cache)
    grads, _ = params.actor.backward(s, dx[:, s.shape[1]:], actor_cache)
    return loss, grads


def actor_loss(s_o, demo: Optional[tuple], params: AgentParams, lambda_bc: float):
    """Combined policy loss: -mean Q(s, pi(s)) plus the masked BC penalty.

    ``demo`` is ``(s_d, a_d)`` or ``None``. The mask is a constant with
    respect to the actor parameters. Returns ``(info, actor_grads)``.
    """
    loss_o, grads = _original_term(np.asarray(s_o, dtype=float), params)
    bc_loss = 0.0
    mask_rate = 0.0
    if demo is not None and len(demo[0]) > 0:
        s_d, a_d = (np.asarray(v, dtype=float) for v in demo)
        n_d = len(s_d)
        a_hat, cache = params.actor.forward_cached(s_d)
        mask = q_filter_mask(params.critic, s_d, a_d, a_hat)
        diff = a_d - a_hat
        bc_loss = float(np.mean(mask * np.sum(diff**2, axis=1)))
        mask_rate = float(np.mean(mask))
        if mask_rate > 0.0 and lambda_bc != 0.0:
            upstream = lambda_bc * (-2.0 / n_d) * mask[:, None] * diff
            bc_grads, _ = params.actor.backward(s_d, upstream, cache)
            grads = [g + h for g, h in zip(grads, bc_grads)]
    info = ActorLossInfo(loss_o + lambda_bc * bc_loss, loss_o, bc_loss, mask_rate)
    return info, grads


def ddpg_actor_loss(s_o, params: AgentParams):
    """Plain deterministic-policy-gradient loss, no demonstration term."""
    loss_o, grads = _original_term(np.asarray(s_o, dtype=float), params)
    return ActorLossInfo(loss_o, loss_o, 0.0, 0.0), grads


@dataclass
class UpdateStats:
    critic_loss: float
    actor_loss: float
    bc_loss: float
    mask_rate: float


def update(params: AgentParams, batch_o: Batch, demo: Optional[tuple], config: TrainConfig,
           use_bc: bool = True) -> UpdateStats:
    """One critic step, one actor step, then Polyak averaging of both targets."""
    c_loss, c_grads = critic_loss(batch_o, params, config.gamma)
    adam_step(params.critic.params, c_grads, params.critic_opt)
    if use_bc:
        info, a_grads = actor_loss(batch_o.s, demo, params, config.lambda_bc)
    else:
        info, a_grads = ddpg_actor_loss(batch_o.s, params)
    adam_step(params.actor.params, a_grads, params.actor_opt)
    polyak_update(params.target_actor.params, params.actor.params, config.omega)
    polyak_update(params.target_critic.params, params.critic.params, config.omega)
    return UpdateStats(c_loss, info.loss, info.bc_loss, info.mask_rate)


# ---------------------------------------------------------------- training loop

LOG_COLUMNS = ("episode", "steps", "return", "cause", "critic_loss", "actor_loss", "bc_loss", "mask_rate")


@dataclass
class EpisodeLog:
    episode: int
    steps: int
    ret: float
    cause: str
    critic_loss: float
    actor_loss: float
    bc_loss: float
    mask_rate: float

    def row(self) -> list:
        return [self.episode, self.steps, repr(self.ret), self.cause, repr(self.critic_loss),
                repr(self.actor_loss), repr(self.bc_loss), repr(self.mask_rate)]


@dataclass
class TrainingState:
    """Counters and RNG streams; enough to resume a run between epochs."""

    epoch: int = 0
    episode: int = 0
    total_steps: int = 0
    rng_states: dict = field(default_factory=dict)


def _streams(seed: int) -> dict:
    names = ("init", "env", "noise", "batch")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.Generator(np.random.PCG64(c)) for name, c in zip(names, children)}


def checkpoint_meta(config: TrainConfig, state: TrainingState, task: TaskKind) -> dict:
    return {"task": task.value, "train_config": asdict(config), "state": asdict(state)}


def save_agent(path, params: AgentParams, meta: Optional[dict] = None) -> None:
    nn.save_checkpoint(
        path,
        {"actor": params.actor, "critic": params.critic,
         "target_actor": params.target_actor, "target_critic": params.target_critic},
        {"actor": params.actor_opt, "critic": params.critic_opt},
        meta,
    )


def load_agent(path):
    """Returns ``(AgentParams, meta)``; any read problem becomes CheckpointError."""
    try:
        nets, opts, meta = nn.load_checkpoint(path)
        params = AgentParams(nets["actor"], nets["critic"], nets["target_actor"], nets["target_critic"],
                             opts["actor"], opts["critic"])
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    return params, meta


def train(
    config: TrainConfig,
    task: TaskKind,
    buffer_o: ReplayBuffer,
    buffer_d: Optional[ReplayBuffer] = None,
    env_params: EnvParams = EnvParams(),
    checkpoint_sink: Optional[Callable] = None,
    log_sink: Optional[Callable[[EpisodeLog], None]] = None,
    use_bc: bool = True,
    resume: Optional[tuple] = None,
) -> tuple[AgentParams, list[EpisodeLog]]:
    """Run the off-policy training loop.

    ``buffer_o`` and ``buffer_d`` arrive pre-filled with demonstrations (or
    empty for the plain baseline). With ``update_granularity == "steps"``,
    every ``n_up`` environment steps trigger ``n_up`` updates; with
    ``"episodes"`` one update follows every ``n_up`` episodes.
    ``checkpoint_sink(params, state)`` runs after each epoch.
    ``use_bc=False`` swaps in the plain DDPG actor loss. ``resume`` is an
    ``(AgentParams, TrainingState)`` pair from an earlier checkpoint.
    """
    task = TaskKind.parse(task)
    env_params = EnvParams(env_params.model, env_params.workspace, env_params.reward, config.n_tau,
                           env_params.half_size, env_params.margin, env_params.partition_slack)
    model = env_params.model
    env = ReachEnv(task, env_params)
    rngs = _streams(config.seed)

    if resume is None:
        params = make_agent(buffer_o.obs_dim, buffer_o.act_dim, model.vel_limit, config, rngs["init"])
        state = TrainingState()
    else:
        params, state = resume
        for name, st in state.rng_states.items():
            rngs[name].bit_generator.state = st

    demo_ready = buffer_d is not None and len(buffer_d) > 0
    logs: list[EpisodeLog] = []

    def do_update() -> UpdateStats:
        batch = buffer_o.sample_arrays(config.batch_o, rngs["batch"])
        demo = None
        if demo_ready and use_bc:
            db = buffer_d.sample_arrays(config.batch_d, rngs["batch"])
            demo = (db.s, db.a)
        return update(params, batch, demo, config, use_bc)

    while state.epoch < config.n_ep:
        for _ in range(config.episodes_per_epoch):
            cfg = sample_episode(Stage.Train, task, rngs["env"], env_params)
            obs = env.reset(cfg).to_vector()
            ret = 0.0
            stats: list[UpdateStats] = []
            while True:
                if state.total_steps < config.start_steps:
                    a = rngs["noise"].uniform(-model.vel_limit, model.vel_limit, size=params.act_dim)
                else:
                    a = act(params.actor, obs, config.sigma, rngs["noise"])
                out = env.step(a)
                nxt = out.obs_next.to_vector()
                end = cfg.goal - obs[19:22]
                buffer_o.push(Transition(obs, a, out.reward, nxt, out.zeta,
                                         sector_index(math.atan2(end[1], end[0])), False))
                ret += out.reward
                state.total_steps += 1
                if (config.update_granularity == "steps" and state.total_steps % config.n_up == 0
                        and state.total_steps >= config.update_after and len(buffer_o) >= config.batch_o):
                    stats.extend(do_update() for _ in range(config.n_up))
                obs = nxt
                if out.zeta:
                    break
            state.episode += 1
            if (config.update_granularity == "episodes" and state.episode % config.n_up == 0
                    and state.total_steps >= config.update_after and len(buffer_o) >= config.batch_o):
                stats.append(do_update())

            def avg(key):
                return float(np.mean([getattr(s, key) for s in stats])) if stats else float("nan")

            log = EpisodeLog(state.episode, env.t, ret, out.cause.value, avg("critic_loss"),
                             avg("actor_loss"), avg("bc_loss"), avg("mask_rate"))
            logs.append(log)
            if log_sink is not None:
                log_sink(log)
        state.epoch += 1
        state.rng_states = {name: g.bit_generator.state for name, g in rngs.items()}
        if checkpoint_sink is not None:
            checkpoint_sink(params, state)
    return params, logs
