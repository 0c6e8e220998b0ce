"""Kinematics and a first-order dynamics proxy for a yaw + 3-pitch arm.

Joint 1 rotates about the world z axis; joints 2-4 rotate about the base
y axis after it has been turned by joint 1. At ``q = 0`` the whole chain
points straight up. The yaw joint is continuous: its angle is wrapped into
``[-pi, pi)`` instead of being clamped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81
VELOCITY_LAG = 0.1  # first-order velocity tracking time constant [s]

IK_DAMPING = 0.05
IK_STEP_CAP = 0.2
IK_MAX_ITERS = 200
IK_TOL = 1e-3


class Unreachable(Exception):
    """Inverse kinematics did not converge to the requested target."""


def wrap_angle(a):
    """Wrap angle(s) into ``[-pi, pi)``."""
    return (np.asarray(a, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class RobotModel:
    base_height: float = 0.15
    link_lengths: tuple[float, float, float] = (0.30, 0.30, 0.25)
    joint_limits: tuple[tuple[float, float], ...] = (
        (-np.pi, np.pi),
        (-2.4, 2.4),
        (-2.4, 2.4),
        (-2.4, 2.4),
    )
    vel_limit: float = 1.0
    tau_max: tuple[float, float, float, float] = (39.0, 39.0, 39.0, 9.0)
    # point masses at the midpoints of links 1-3 and at the gripper
    link_masses: tuple[float, float, float, float] = (2.0, 1.5, 1.0, 0.9)
    damping: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.2)
    dt: float = 0.05

    def __post_init__(self):
        if self.base_height < 0:
            raise ValueError("base_height must be >= 0")
        if len(self.link_lengths) != 3 or min(self.link_lengths) <= 0:
            raise ValueError("link_lengths must be 3 positive lengths")
        if len(self.joint_limits) != 4 or any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("joint_limits must be 4 pairs with lo < hi")
        if self.vel_limit <= 0:
            raise ValueError("vel_limit must be > 0")
        if len(self.tau_max) != 4 or min(self.tau_max) <= 0:
            raise ValueError("tau_max must be 4 positive torques")
        if len(self.link_masses) != 4 or min(self.link_masses) < 0:
            raise ValueError("link_masses must be 4 nonnegative masses")
        if len(self.damping) != 4 or min(self.damping) < 0:
            raise ValueError("damping must be 4 nonnegative coefficients")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.joint_limits])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.joint_limits])

    def clip_joints(self, q: np.ndarray) -> np.ndarray:
        out = np.clip(q, self.lower, self.upper)
        out[0] = wrap_angle(q[0])
        return out


@dataclass
class JointState:
    q: np.ndarray = field(default_factory=lambda: np.zeros(4))
    qdot: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.qdot.copy())


@dataclass
class ArmPose:
    joint_points: np.ndarray  # (5, 3): base, shoulder, elbow, wrist, end-effector

    @property
    def end(self) -> np.ndarray:
        return self.joint_points[4]


def _planar_chain(model: RobotModel, q: np.ndarray):
    """Radial/vertical coordinates of the 5 chain points in the arm plane."""
    pitch = np.cumsum(q[1:4])
    r = np.zeros(5)
    z = np.zeros(5)
    z[1] = model.base_height
    for i in range(3):
        r[i + 2] = r[i + 1] + model.link_lengths[i] * np.sin(pitch[i])
        z[i + 2] = z[i + 1] + model.link_lengths[i] * np.cos(pitch[i])
    return r, z


def forward_kinematics(model: RobotModel, q) -> ArmPose:
    q = np.asarray(q, dtype=float)
    r, z = _planar_chain(model, q)
    c, s = np.cos(q[0]), np.sin(q[0])
    pts = np.stack([r * c, r * s, z], axis=1)
    return ArmPose(pts)


def jacobian(model: RobotModel, q) -> np.ndarray:
    """Positional Jacobian of the end-effector, shape (3, 4)."""
    q = np.asarray(q, dtype=float)
    pts = forward_kinematics(model, q).joint_points
    end = pts[4]
    J = np.empty((3, 4))
    J[:, 0] = np.cross([0.0, 0.0, 1.0], end)
    axis = np.array([-np.sin(q[0]), np.cos(q[0]), 0.0])
    for j in range(1, 4):
        J[:, j] = np.cross(axis, end - pts[j])
    return J


def inverse_kinematics(model: RobotModel, target, q_seed) -> np.ndarray:
    """Damped least-squares IK for the end-effector position.

    Raises Unreachable when the target is beyond the chain or the iteration
    fails to get within ``IK_TOL`` metres in ``IK_MAX_ITERS`` steps.
    """
    target = np.asarray(target, dtype=float)
    shoulder = np.array([0.0, 0.0, model.base_height])
    if np.linalg.norm(target - shoulder) > model.reach:
        raise Unreachable(f"target {target} is beyond reach {model.reach:.3f} m")

    q = model.clip_joints(np.array(q_seed, dtype=float))
    damp2 = IK_DAMPING**2
    err_norm = np.inf
    for _ in range(IK_MAX_ITERS):
        err = target - forward_kinematics(model, q).end
        err_norm = np.linalg.norm(err)
        if err_norm < 1e-9:
            break
        J = jacobian(model, q)
        dq = J.T @ np.linalg.solve(J @ J.T + damp2 * np.eye(3), err)
        peak = np.max(np.abs(dq))
        if peak > IK_STEP_CAP:
            dq *= IK_STEP_CAP / peak
        q = model.clip_joints(q + dq)
    else:
        err_norm = np.linalg.norm(target - forward_kinematics(model, q).end)

    if err_norm > IK_TOL:
        raise Unreachable(f"IK stalled at {err_norm:.2e} m from {target}")
    return q


def _gravity_and_inertia(model: RobotModel, q: np.ndarray):
    r, z = _planar_chain(model, q)
    # mass positions in the arm plane: link midpoints then the gripper
    mr = np.array([(r[1] + r[2]) / 2, (r[2] + r[3]) / 2, (r[3] + r[4]) / 2, r[4]])
    mz = np.array([(z[1] + z[2]) / 2, (z[2] + z[3]) / 2, (z[3] + z[4]) / 2, z[4]])
    m = np.asarray(model.link_masses)

    g = np.zeros(4)
    inertia = np.zeros(4)
    inertia[0] = np.sum(m * mr**2)
    # pitch joint j sits at chain point j and carries masses on links j.. plus gripper
    for j in range(1, 4):
        distal = slice(j - 1, 4)
        dr = mr[distal] - r[j]
        dz = mz[distal] - z[j]
        g[j] = GRAVITY * np.sum(m[distal] * dr)
        inertia[j] = np.sum(m[distal] * (dr**2 + dz**2))
    return g, inertia


def gravity_torques(model: RobotModel, q) -> np.ndarray:
    return _gravity_and_inertia(model, np.asarray(q, dtype=float))[0]


def step(model: RobotModel, st: JointState, a) -> tuple[JointState, np.ndarray]:
    """Advance one control period under a joint-velocity command.

    Returns the next state and the normalized torque estimate ``tau_hat``.
    """
    a = np.clip(np.asarray(a, dtype=float), -model.vel_limit, model.vel_limit)
    alpha = min(1.0, model.dt / VELOCITY_LAG)
    qdot = st.qdot + alpha * (a - st.qdot)
    q_raw = st.q + qdot * model.dt

    q = q_raw.copy()
    if not -np.pi <= q_raw[0] < np.pi:
        q[0] = wrap_angle(q_raw[0])
    lo, hi = model.lower[1:], model.upper[1:]
    hit = (q_raw[1:] < lo) | (q_raw[1:] > hi)
    q[1:] = np.clip(q_raw[1:], lo, hi)
    qdot[1:] = np.where(hit, 0.0, qdot[1:])

    qddot = (qdot - st.qdot) / model.dt
    g, inertia = _gravity_and_inertia(model, q)
    tau = inertia * qddot + np.asarray(model.damping) * qdot + g
    tau_hat = np.abs(tau) / np.asarray(model.tau_max)
    return JointState(q, qdot), tau_hat
