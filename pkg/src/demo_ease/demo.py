"""PID demonstrations recorded in one partition and copied into the others."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import robot
from .env import (
    Cause,
    EnvParams,
    EpisodeConfig,
    PolarPoint,
    ReachEnv,
    TaskKind,
    rotate_vector_obs,
    sample_episode,
    stage_for,
)
from .replay import ReplayBuffer, Transition
from .robot import RobotModel, wrap_angle

INTEGRAL_CLAMP = 1.0
SWITCH_TOL = 0.1
OBSTACLE_CLEARANCE = 0.15


@dataclass(frozen=True)
class PidGains:
    kp: tuple = (2.0, 2.0, 2.0, 2.0)
    ki: tuple = (0.1, 0.1, 0.1, 0.1)
    kd: tuple = (0.2, 0.2, 0.2, 0.2)

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            object.__setattr__(self, name, tuple(float(v) for v in np.broadcast_to(getattr(self, name), 4)))
        if min(self.kp) <= 0:
            raise ValueError("kp must be > 0")
        if min(self.ki) < 0 or min(self.kd) < 0:
            raise ValueError("ki and kd must be >= 0")


def pid_action(gains: PidGains, q_sp, q, integral, qdot, dt: float, vel_limit: float = 1.0):
    """Joint-velocity PID command. Returns ``(a, integral')``.

    The yaw error is wrapped so the base turns the short way round.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    e = np.asarray(q_sp, dtype=float) - np.asarray(q, dtype=float)
    e[0] = wrap_angle(e[0])
    integral = np.clip(np.asarray(integral, dtype=float) + e * dt, -INTEGRAL_CLAMP, INTEGRAL_CLAMP)
    a = np.asarray(gains.kp) * e + np.asarray(gains.ki) * integral - np.asarray(gains.kd) * np.asarray(qdot)
    return np.clip(a, -vel_limit, vel_limit), integral


@dataclass
class SetpointPlan:
    waypoints: list
    switch_tol: float = SWITCH_TOL

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("a setpoint plan needs at least one waypoint")


def plan_setpoints(config: EpisodeConfig, model: RobotModel) -> SetpointPlan:
    """Joint-space setpoints: the goal IK, preceded for obstacle episodes by a
    waypoint half way round (in base angle) and lifted over the obstacle."""
    q0 = np.asarray(config.q0, dtype=float)
    if config.obstacle is None:
        return SetpointPlan([robot.inverse_kinematics(model, config.goal, q0)])
    start = PolarPoint.from_cartesian(robot.forward_kinematics(model, q0).end)
    goal = PolarPoint.from_cartesian(config.goal)
    theta_mid = goal.theta + wrap_angle(start.theta - goal.theta) / 2.0
    z_mid = max(goal.z, float(config.obstacle[2]) + OBSTACLE_CLEARANCE)
    mid = PolarPoint(theta_mid, goal.rho, z_mid).to_cartesian()
    q_mid = robot.inverse_kinematics(model, mid, q0)
    return SetpointPlan([q_mid, robot.inverse_kinematics(model, config.goal, q_mid)])


class PidDemonstrator:
    """Stateful PID policy following a ``SetpointPlan``."""

    def __init__(self, plan: SetpointPlan, model: RobotModel, gains: PidGains = PidGains()):
        self.plan = plan
        self.model = model
        self.gains = gains
        self.index = 0
        self.integral = np.zeros(4)

    @property
    def setpoint(self) -> np.ndarray:
        return self.plan.waypoints[self.index]

    def __call__(self, q, qdot) -> np.ndarray:
        if self.index < len(self.plan.waypoints) - 1:
            gap = np.asarray(q) - self.setpoint
            gap[0] = wrap_angle(gap[0])
            if np.linalg.norm(gap) < self.plan.switch_tol:
                self.index += 1
                self.integral = np.zeros(4)
        a, self.integral = pid_action(self.gains, self.setpoint, q, self.integral, qdot,
                                      self.model.dt, self.model.vel_limit)
        return a


@dataclass
class DemoEpisode:
    config: EpisodeConfig
    transitions: list
    cause: Cause


def rollout_pid(env: ReachEnv, config: EpisodeConfig, gains: PidGains = PidGains()) -> DemoEpisode:
    """Run the PID demonstrator for one episode until the ending flag fires."""
    controller = PidDemonstrator(plan_setpoints(config, env.model), env.model, gains)
    obs = env.reset(config)
    transitions = []
    part = config.partition if config.partition is not None else 0
    while True:
        a = controller(obs.q, obs.qdot)
        out = env.step(a)
        transitions.append(Transition(obs.to_vector(), a, out.reward, out.obs_next.to_vector(),
                                      out.zeta, part, True))
        obs = out.obs_next
        if out.zeta:
            return DemoEpisode(config, transitions, out.cause)


def duplicate(t: Transition, quarter_turns: int, M: int = 4) -> Transition:
    """Symmetric copy of a transition; reward and ending flag are unchanged."""
    return Transition(
        rotate_vector_obs(t.s, quarter_turns),
        t.a.copy(),
        t.r,
        rotate_vector_obs(t.s_next, quarter_turns),
        t.zeta,
        (t.partition + quarter_turns) % M,
        t.is_demo,
    )


@dataclass
class DemoStats:
    episodes: int = 0
    transitions: int = 0
    stored: int = 0
    discarded: int = 0
    causes: Counter = field(default_factory=Counter)
    lengths: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "transitions": self.transitions,
            "stored": self.stored,
            "discarded": self.discarded,
            "reached": self.causes.get(Cause.Reached.value, 0),
            "timeout": self.causes.get(Cause.Timeout.value, 0),
            "collision": self.causes.get(Cause.Collision.value, 0),
            "left_partition": self.causes.get(Cause.LeftPartition.value, 0),
            "lengths": list(self.lengths),
        }


def record_demos(
    task: TaskKind,
    n_demos: int,
    buffer_o: Optional[ReplayBuffer],
    buffer_d: Optional[ReplayBuffer],
    rng: np.random.Generator,
    params: EnvParams = EnvParams(),
    gains: PidGains = PidGains(),
    discard_failed: bool = False,
    episodes_out: Optional[list] = None,
) -> DemoStats:
    """Record ``n_demos`` PID episodes, each in a uniformly drawn partition,
    and store every transition plus its M-1 rotated copies in both buffers.
    """
    task = TaskKind.parse(task)
    M = params.workspace.M
    env = ReachEnv(task, params, demo_stage=True)
    stage = stage_for(task, "demo")
    stats = DemoStats()
    for _ in range(n_demos):
        k = int(rng.integers(M))
        config = sample_episode(stage, task, rng, params, partition=k)
        episode = rollout_pid(env, config, gains)
        stats.episodes += 1
        stats.causes[episode.cause.value] += 1
        stats.lengths.append(len(episode.transitions))
        if episodes_out is not None:
            episodes_out.append(episode)
        if discard_failed and episode.cause is not Cause.Reached:
            stats.discarded += 1
            continue
        stats.transitions += len(episode.transitions)
        for t in episode.transitions:
            copies = [t] + [duplicate(t, j, M) for j in range(1, M)]
            for c in copies:
                for buf in (buffer_d, buffer_o):
                    if buf is not None:
                        buf.push(c)
            stats.stored += len(copies)
    return stats


def demo_capacity(n_demos: int, n_tau: int, M: int = 4) -> int:
    """Worst-case demonstration count: every episode runs the full length."""
    return max(1, M * n_demos * n_tau)
