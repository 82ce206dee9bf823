"""Forward kinematics and Jacobian for the 7-DOF catching robot.

The robot is a serial chain: one prismatic base joint (a linear rail) carrying
a 6-revolute-joint arm, with a rigid tool transform placing the net-center
frame beyond the wrist. The net normal is the tool frame's local y-axis.

The true hardware geometry is not public; the chain here is a nominal elbow
manipulator with ~0.9 m reach on a +/-1.35 m rail. All parameters are plain
data and can be overridden from the config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

PRISMATIC = "prismatic"
REVOLUTE = "revolute"


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3-vector cross product without np.cross's axis plumbing overhead."""
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation for a unit axis."""
    x, y, z = axis
    c = np.cos(angle)
    s = np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


@dataclass(frozen=True)
class Joint:
    kind: str  # PRISMATIC or REVOLUTE
    axis: np.ndarray  # (3,) unit vector in the local frame
    origin: np.ndarray  # (3,) translation from the parent frame

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise ValueError("joint axis must be nonzero")
        object.__setattr__(self, "axis", axis / n)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        if self.kind not in (PRISMATIC, REVOLUTE):
            raise ValueError(f"unknown joint kind {self.kind!r}")


@dataclass(frozen=True)
class Pose:
    """Position and orientation of the net-center frame."""

    p: np.ndarray  # (3,) meters
    R: np.ndarray  # (3, 3) rotation matrix

    @property
    def net_normal(self) -> np.ndarray:
        """The net's catching axis: local y expressed in the inertial frame."""
        return self.R[:, 1].copy()


@dataclass(frozen=True)
class KinematicModel:
    joints: Tuple[Joint, ...]
    tool_offset: np.ndarray  # (3,) from last joint frame to net center
    tool_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if len(self.joints) != 7:
            raise ValueError("chain must have exactly 7 joints")
        if self.joints[0].kind != PRISMATIC or any(j.kind != REVOLUTE for j in self.joints[1:]):
            raise ValueError("chain must be 1 prismatic joint followed by 6 revolute joints")
        object.__setattr__(self, "tool_offset", np.asarray(self.tool_offset, dtype=float).reshape(3))
        object.__setattr__(self, "tool_rotation", np.asarray(self.tool_rotation, dtype=float).reshape(3, 3))

    @property
    def dof(self) -> int:
        return len(self.joints)


def default_model() -> KinematicModel:
    """Nominal rail + elbow-arm chain used throughout the default config.

    At q = 0 the upper arm points straight up and the forearm points forward
    (+y, toward the thrower), so the net normal at home is +y.
    """
    return KinematicModel(
        joints=(
            Joint(PRISMATIC, (1, 0, 0), (0.0, 0.0, 0.0)),   # base rail
            Joint(REVOLUTE, (0, 0, 1), (0.0, 0.0, 0.55)),   # shoulder yaw, atop the carriage column
            Joint(REVOLUTE, (1, 0, 0), (0.0, 0.0, 0.12)),   # shoulder pitch
            Joint(REVOLUTE, (1, 0, 0), (0.0, 0.0, 0.35)),   # elbow pitch
            Joint(REVOLUTE, (0, 1, 0), (0.0, 0.20, 0.0)),   # forearm roll
            Joint(REVOLUTE, (1, 0, 0), (0.0, 0.12, 0.0)),   # wrist pitch
            Joint(REVOLUTE, (0, 1, 0), (0.0, 0.08, 0.0)),   # wrist roll (approach axis)
        ),
        tool_offset=(0.0, 0.18, 0.0),  # net center sits on the wrist-roll axis
    )


# Net-center pose of default_model() at q = 0, frozen as a golden value.
HOME_POSITION = np.array([0.0, 0.58, 1.02])
HOME_ROTATION = np.eye(3)


def _chain_frames(model: KinematicModel, q: np.ndarray):
    """World origin and axis of every joint plus the end pose."""
    R = np.eye(3)
    p = np.zeros(3)
    origins = []
    axes = []
    for joint, qi in zip(model.joints, q):
        p = p + R @ joint.origin
        axis_w = R @ joint.axis
        origins.append(p)
        axes.append(axis_w)
        if joint.kind == PRISMATIC:
            p = p + axis_w * qi
        else:
            R = R @ rotation_about_axis(joint.axis, qi)
    p = p + R @ model.tool_offset
    R = R @ model.tool_rotation
    return origins, axes, p, R


def fk(model: KinematicModel, q: Sequence[float]) -> Pose:
    """Pose of the net-center frame for joint configuration ``q``."""
    q = np.asarray(q, dtype=float).reshape(model.dof)
    _, _, p, R = _chain_frames(model, q)
    return Pose(p=p, R=R)


def jacobian(model: KinematicModel, q: Sequence[float]) -> np.ndarray:
    """Geometric Jacobian of the net-center frame, 6x7.

    Rows 0..2 are translational, rows 3..5 rotational, both in the inertial
    frame: (v_h, w_h) = J @ qdot.
    """
    q = np.asarray(q, dtype=float).reshape(model.dof)
    origins, axes, p_e, _ = _chain_frames(model, q)
    J = np.zeros((6, model.dof))
    for i, joint in enumerate(model.joints):
        if joint.kind == PRISMATIC:
            J[:3, i] = axes[i]
        else:
            J[:3, i] = _cross3(axes[i], p_e - origins[i])
            J[3:, i] = axes[i]
    return J


def head_velocity(model: KinematicModel, q: Sequence[float],
                  qdot: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Translational and rotational velocity of the net center."""
    qdot = np.asarray(qdot, dtype=float).reshape(model.dof)
    twist = jacobian(model, q) @ qdot
    return twist[:3], twist[3:]


def fk_with_jacobian(model: KinematicModel, q: Sequence[float]) -> Tuple[Pose, np.ndarray]:
    """Single-pass pose + Jacobian (shared chain sweep)."""
    q = np.asarray(q, dtype=float).reshape(model.dof)
    origins, axes, p_e, R = _chain_frames(model, q)
    J = np.zeros((6, model.dof))
    for i, joint in enumerate(model.joints):
        if joint.kind == PRISMATIC:
            J[:3, i] = axes[i]
        else:
            J[:3, i] = _cross3(axes[i], p_e - origins[i])
            J[3:, i] = axes[i]
    return Pose(p=p_e, R=R), J
