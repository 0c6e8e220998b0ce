"""Reaching MDP (with and without a cubic obstacle) on top of ``robot``.

Angles follow the ``[-pi, pi)`` convention. Partition ``k`` is the quadrant
``[k*pi/2, (k+1)*pi/2)`` taken modulo ``2*pi``, so partition 0 is
``[0, pi/2)`` and partition 3 is ``[-pi/2, 0)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import robot
from .robot import ArmPose, JointState, RobotModel, Unreachable, wrap_angle

N_JOINTS = 4
HALF_PI = np.pi / 2


class TaskKind(enum.Enum):
    P2P = "p2p"
    P2PO = "p2p-o"

    @classmethod
    def parse(cls, value) -> "TaskKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        for kind in cls:
            if key in (kind.value, kind.name.lower(), kind.value.replace("-", "")):
                return kind
        raise ValueError(f"unknown task {value!r}; expected p2p or p2p-o")


class Stage(enum.Enum):
    DemoP2P = "demo-p2p"
    DemoP2PO = "demo-p2p-o"
    Train = "train"
    TestP2P = "test-p2p"
    TestP2PO = "test-p2p-o"

    @property
    def is_demo(self) -> bool:
        return self in (Stage.DemoP2P, Stage.DemoP2PO)


class Cause(enum.Enum):
    Running = "running"
    Reached = "reached"
    Timeout = "timeout"
    Collision = "collision"
    LeftPartition = "left_partition"


class OutOfWorkspace(ValueError):
    pass


class SamplingFailed(RuntimeError):
    pass


def obs_dim(task: TaskKind) -> int:
    return 25 if task is TaskKind.P2PO else 22


@dataclass(frozen=True)
class PolarPoint:
    theta: float
    rho: float
    z: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    def to_cartesian(self) -> np.ndarray:
        return np.array([self.rho * np.cos(self.theta), self.rho * np.sin(self.theta), self.z])

    @classmethod
    def from_cartesian(cls, p) -> "PolarPoint":
        return cls(float(np.arctan2(p[1], p[0])), float(np.hypot(p[0], p[1])), float(p[2]))


@dataclass(frozen=True)
class Workspace:
    """Cylindrical-sector workspace split into ``M`` rotational partitions.

    ``boundary`` selects the safety boundary ``xi``: ``"box"`` is an
    axis-aligned square of half-width ``extent``, ``"disc"`` a circle of
    radius ``extent``.
    """

    M: int = 4
    rho_range: tuple[float, float] = (0.3, 0.7)
    z_range: tuple[float, float] = (0.25, 0.65)
    boundary: str = "box"
    extent: float = 1.0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if not self.rho_range[0] < self.rho_range[1]:
            raise ValueError("rho_range must be nonempty")
        if not self.z_range[0] < self.z_range[1]:
            raise ValueError("z_range must be nonempty")
        if self.boundary not in ("box", "disc"):
            raise ValueError(f"boundary must be 'box' or 'disc', got {self.boundary!r}")
        if self.extent <= 0:
            raise ValueError("extent must be > 0")

    @property
    def sector(self) -> float:
        return 2.0 * np.pi / self.M

    def xi(self, theta: float) -> float:
        if self.boundary == "disc":
            return self.extent
        return self.extent / max(abs(np.cos(theta)), abs(np.sin(theta)))

    def contains(self, p) -> bool:
        pp = PolarPoint.from_cartesian(p)
        return pp.z > 0 and pp.rho <= self.xi(pp.theta)


def sector_index(theta: float, M: int = 4) -> int:
    """Sector of an angle, half-open so edges belong to the higher sector."""
    k = int(np.floor((float(theta) % (2.0 * np.pi)) / (2.0 * np.pi / M)))
    return min(k, M - 1)


def partition_of(p, workspace: Workspace = Workspace()) -> int:
    p = np.asarray(p, dtype=float)
    if np.hypot(p[0], p[1]) == 0.0 or not workspace.contains(p):
        raise OutOfWorkspace(f"point {p} is outside the workspace")
    return sector_index(np.arctan2(p[1], p[0]), workspace.M)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# ---------------------------------------------------------------- observations


@dataclass
class Observation:
    q: np.ndarray
    qdot: np.ndarray
    goal: np.ndarray
    err: np.ndarray
    obstacle: Optional[np.ndarray] = None

    @property
    def sin_q(self) -> np.ndarray:
        return np.sin(self.q)

    @property
    def cos_q(self) -> np.ndarray:
        return np.cos(self.q)

    def to_vector(self) -> np.ndarray:
        parts = [self.q, self.sin_q, self.cos_q, self.qdot, self.goal, self.err]
        if self.obstacle is not None:
            parts.append(self.obstacle)
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, v) -> "Observation":
        v = np.asarray(v, dtype=float)
        if v.shape not in ((22,), (25,)):
            raise ValueError(f"observation vector must have 22 or 25 entries, got {v.shape}")
        obstacle = v[22:25].copy() if v.shape[0] == 25 else None
        return cls(v[0:4].copy(), v[12:16].copy(), v[16:19].copy(), v[19:22].copy(), obstacle)


def make_observation(model: RobotModel, st: JointState, goal, obstacle=None) -> Observation:
    end = robot.forward_kinematics(model, st.q).end
    goal = np.asarray(goal, dtype=float)
    return Observation(
        st.q.copy(),
        st.qdot.copy(),
        goal.copy(),
        goal - end,
        None if obstacle is None else np.asarray(obstacle, dtype=float).copy(),
    )


def rotate_vector_obs(v: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Apply the workspace symmetry map to a flat observation vector."""
    return phi_state(Observation.from_vector(v), quarter_turns).to_vector()


def phi_state(obs: Observation, quarter_turns: int, M: int = 4) -> Observation:
    """Rotate an observation by ``quarter_turns`` partitions about the base axis.

    The base joint angle is shifted and every Cartesian quantity (goal,
    obstacle, reaching error) is rotated with the arm; joint velocities are
    untouched.
    """
    delta = quarter_turns * 2.0 * np.pi / M
    R = rot_z(delta)
    q = obs.q.copy()
    q[0] = wrap_angle(q[0] + delta)
    return Observation(
        q,
        obs.qdot.copy(),
        R @ obs.goal,
        R @ obs.err,
        None if obs.obstacle is None else R @ obs.obstacle,
    )


def psi_action(a):
    return a


# ---------------------------------------------------------------- reward / collision


@dataclass(frozen=True)
class RewardParams:
    alpha1: float = 2e-3
    alpha2: float = 1e-3
    R1: float = 10.0
    R2: float = 2.0
    eps: float = 0.05

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "R1", "R2", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


def reward(err, tau_hat, reached: bool, collided: bool, params: RewardParams = RewardParams()) -> float:
    r = -params.alpha1 * float(np.linalg.norm(err)) - params.alpha2 * float(np.linalg.norm(tau_hat))
    if reached:
        r += params.R1
    if collided:
        r -= params.R2
    return r


OBSTACLE_HALF_SIZE = 0.02
COLLISION_MARGIN = 0.01


def segment_box_distance(p0, p1, center, half_size: float):
    """Minimum distance between segment(s) ``p0-p1`` and an axis-aligned cube.

    Accepts single points ``(3,)`` or stacks ``(n, 3)``. The point-to-box
    distance is convex along a segment, so golden-section search on the
    segment parameter converges to the true minimum.
    """
    single = np.ndim(p0) == 1
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    d = np.atleast_2d(np.asarray(p1, dtype=float)) - p0
    c = np.asarray(center, dtype=float)

    def dist(t):
        v = np.abs(p0 + t[:, None] * d - c) - half_size
        return np.linalg.norm(np.maximum(v, 0.0), axis=1)

    n = p0.shape[0]
    lo, hi = np.zeros(n), np.ones(n)
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a = hi - invphi * (hi - lo)
    b = lo + invphi * (hi - lo)
    fa, fb = dist(a), dist(b)
    for _ in range(60):
        left = fa <= fb
        hi = np.where(left, b, hi)
        lo = np.where(left, lo, a)
        a, b = np.where(left, hi - invphi * (hi - lo), b), np.where(left, a, lo + invphi * (hi - lo))
        fa, fb = np.where(left, dist(a), fb), np.where(left, fa, dist(b))
    best = np.minimum(np.minimum(fa, fb), np.minimum(dist(np.zeros(n)), dist(np.ones(n))))
    return float(best[0]) if single else best


def collision_check(
    pose: ArmPose,
    obstacle=None,
    half_size: float = OBSTACLE_HALF_SIZE,
    margin: float = COLLISION_MARGIN,
) -> bool:
    pts = pose.joint_points
    if np.any(pts[:, 2] < 0.0):
        return True
    if obstacle is None:
        return False
    if half_size <= 0:
        raise ValueError("half_size must be > 0")
    dists = segment_box_distance(pts[:-1], pts[1:], obstacle, half_size)
    return bool(np.min(dists) < margin)


# ---------------------------------------------------------------- episodes


@dataclass
class EpisodeConfig:
    q0: np.ndarray
    goal: np.ndarray
    obstacle: Optional[np.ndarray] = None
    partition: Optional[int] = None


@dataclass
class StepOutcome:
    obs_next: Observation
    reward: float
    zeta: int
    cause: Cause
    tau_hat: np.ndarray
    collided: bool = False


@dataclass(frozen=True)
class EnvParams:
    model: RobotModel = field(default_factory=RobotModel)
    workspace: Workspace = field(default_factory=Workspace)
    reward: RewardParams = field(default_factory=RewardParams)
    n_tau: int = 400
    half_size: float = OBSTACLE_HALF_SIZE
    margin: float = COLLISION_MARGIN
    # angular slack when testing whether the end-effector left its partition
    partition_slack: float = 0.02


def in_sector(theta: float, k: int, M: int = 4, slack: float = 0.0) -> bool:
    width = 2.0 * np.pi / M
    offset = float(wrap_angle(theta - k * width))  # in [-pi, pi)
    return -slack <= offset <= width + slack


class ReachEnv:
    """Stateful episode wrapper; one instance per thread."""

    def __init__(self, task: TaskKind, params: EnvParams = EnvParams(), demo_stage: bool = False):
        self.task = TaskKind.parse(task)
        self.params = params
        self.demo_stage = demo_stage
        self.config: Optional[EpisodeConfig] = None
        self.state: Optional[JointState] = None
        self.t = 0

    @property
    def model(self) -> RobotModel:
        return self.params.model

    def reset(self, config: EpisodeConfig) -> Observation:
        if self.task is TaskKind.P2PO and config.obstacle is None:
            raise ValueError("P2P-O episodes need an obstacle")
        self.config = config
        self.state = JointState(np.array(config.q0, dtype=float), np.zeros(N_JOINTS))
        self.t = 0
        return self.observe()

    def observe(self) -> Observation:
        obstacle = self.config.obstacle if self.task is TaskKind.P2PO else None
        return make_observation(self.model, self.state, self.config.goal, obstacle)

    def step(self, action) -> StepOutcome:
        if self.config is None:
            raise RuntimeError("reset() must be called before step()")
        out = env_step(self.state, action, self.config, self.t, self.task, self.params, self.demo_stage)
        self.state = JointState(out.obs_next.q.copy(), out.obs_next.qdot.copy())
        self.t += 1
        return out


def env_step(
    state: JointState,
    action,
    config: EpisodeConfig,
    t: int,
    task: TaskKind,
    params: EnvParams = EnvParams(),
    demo_stage: bool = False,
) -> StepOutcome:
    """One transition of the MDP from ``state`` at step index ``t``.

    Termination priority is Collision > Reached > Timeout > LeftPartition;
    the partition rule only applies while recording demonstrations.
    """
    model = params.model
    nxt, tau_hat = robot.step(model, state, action)
    pose = robot.forward_kinematics(model, nxt.q)
    obstacle = config.obstacle if task is TaskKind.P2PO else None
    obs = make_observation(model, nxt, config.goal, obstacle)

    collided = collision_check(pose, obstacle, params.half_size, params.margin)
    reached = float(np.linalg.norm(obs.err)) < params.reward.eps
    r = reward(obs.err, tau_hat, reached, collided, params.reward)

    if collided:
        cause = Cause.Collision
    elif reached:
        cause = Cause.Reached
    elif t + 1 >= params.n_tau:
        cause = Cause.Timeout
    elif demo_stage and config.partition is not None and not in_sector(
        np.arctan2(pose.end[1], pose.end[0]), config.partition, params.workspace.M, params.partition_slack
    ):
        cause = Cause.LeftPartition
    else:
        cause = Cause.Running
    return StepOutcome(obs, r, int(cause is not Cause.Running), cause, tau_hat, collided)


def _polar(theta, rho, z) -> np.ndarray:
    return PolarPoint(theta, rho, z).to_cartesian()


# IK seed for a polar target: yaw toward the target, a mildly bent elbow
_IK_SEED_PITCH = np.array([0.6, 0.9, 0.6])


def ik_for_point(model: RobotModel, p, q_seed=None) -> np.ndarray:
    if q_seed is None:
        q_seed = np.concatenate([[np.arctan2(p[1], p[0])], _IK_SEED_PITCH])
    return robot.inverse_kinematics(model, p, q_seed)


def _draw(stage: Stage, task: TaskKind, rng: np.random.Generator, partition: Optional[int]):
    u = rng.uniform
    obstacle = None
    part = None
    if stage.is_demo:
        # partition p is reached by the sampling index k = p + 1: the
        # goal sector [k*pi/2 - pi/2, k*pi/2) is then exactly partition p
        part = int(rng.integers(4)) if partition is None else int(partition)
        k = part + 1
        if stage is Stage.DemoP2P:
            start = (k * HALF_PI - np.pi / 4, 0.52, 0.42)
            goal = (u(k * HALF_PI - HALF_PI, k * HALF_PI), u(0.4, 0.6), u(0.35, 0.55))
        else:
            start = (k * HALF_PI, 0.52, 0.42)
            goal = (u(k * HALF_PI - np.pi / 4, k * HALF_PI), u(0.4, 0.6), u(0.35, 0.55))
            obstacle = (
                u(goal[0] - np.pi / 6, goal[0] - np.pi / 12),
                u(0.4, 0.6),
                u(goal[2] - 0.1, goal[2] + 0.1),
            )
    else:
        if stage is Stage.Train:
            start = (np.pi / 4, 0.52, 0.42)
        elif stage is Stage.TestP2P:
            start = (-np.pi / 4, 0.5, 0.45)
        else:
            start = (-np.pi / 2, 0.5, 0.45)
        goal = (u(-np.pi, np.pi), u(0.3, 0.7), u(0.25, 0.65))
        if task is TaskKind.P2PO:
            sign = np.sign(u(0.0, 1.0) - 0.5)
            offset = u(np.pi / 12, np.pi / 6)
            obstacle = (goal[0] + sign * offset, u(0.4, 0.6), u(goal[2] - 0.1, goal[2] + 0.1))
    return start, goal, obstacle, part


def stage_for(task: TaskKind, kind: str) -> Stage:
    task = TaskKind.parse(task)
    if kind == "demo":
        return Stage.DemoP2PO if task is TaskKind.P2PO else Stage.DemoP2P
    if kind == "test":
        return Stage.TestP2PO if task is TaskKind.P2PO else Stage.TestP2P
    return Stage.Train


def sample_episode(
    stage: Stage,
    task: TaskKind,
    rng: np.random.Generator,
    params: EnvParams = EnvParams(),
    partition: Optional[int] = None,
    max_retries: int = 20,
) -> EpisodeConfig:
    """Draw start, goal and obstacle for a stage; resample unreachable draws.

    A draw is rejected when the start or the goal has no IK solution or the
    start pose already collides.
    """
    task = TaskKind.parse(task)
    model = params.model
    for _ in range(max_retries + 1):
        start, goal, obstacle, part = _draw(stage, task, rng, partition)
        start_p, goal_p = _polar(*start), _polar(*goal)
        obstacle_p = None if obstacle is None else _polar(*obstacle)
        try:
            q0 = ik_for_point(model, start_p)
            ik_for_point(model, goal_p)
        except Unreachable:
            continue
        if task is TaskKind.P2PO and collision_check(
            robot.forward_kinematics(model, q0), obstacle_p, params.half_size, params.margin
        ):
            continue
        return EpisodeConfig(q0, goal_p, obstacle_p if task is TaskKind.P2PO else None, part)
    raise SamplingFailed(f"no valid {stage.value} episode after {max_retries} retries")


def rotate_config(config: EpisodeConfig, quarter_turns: int, M: int = 4) -> EpisodeConfig:
    """Episode config mapped into another partition by the symmetry."""
    delta = quarter_turns * 2.0 * np.pi / M
    R = rot_z(delta)
    q0 = np.array(config.q0, dtype=float)
    q0[0] = wrap_angle(q0[0] + delta)
    return replace(
        config,
        q0=q0,
        goal=R @ config.goal,
        obstacle=None if config.obstacle is None else R @ config.obstacle,
        partition=None if config.partition is None else (config.partition + quarter_turns) % M,
    )
