"""Modified-DH kinematics of the RCM arm and wristed tool.

Frame conventions (fixed here, every roundtrip in the package is internal to them):

* base frame: origin at the remote centre of motion (RCM), tool shaft points
  along -z at q = 0.
* frame 3 (shaft): ``R03 = Ry(-q1) @ Rx(pi - q2)``; its z axis points from the
  RCM toward the wrist, so the wrist sits at ``(l_tool - l1 + q3) * z3``.
* jaw / fiducial cross frame: ``R_fid = R03 @ Rz(-q4 - pi/2) @ Rx(q6) @ Ry(q5)``.
  With this chain the closed-form extraction ``q4 = atan2(-r22, r12)``,
  ``q5 = atan2(-r31, r33)``, ``q6 = atan2(r32, hypot(r31, r33))`` on
  ``R03.T @ R_fid`` is exact for |q6| < pi/2.

At q = 0 the jaw rotation is ``Rx(pi) @ Rz(-pi/2)`` (see ``ZERO_JAW_ROTATION``).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict
from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateGeometryError,
    LimitViolationError,
    SingularConfigurationError,
)

ROLES = ("commanded", "physical", "desired", "estimated")

# fiducial labels: 1, 2 shaft (proximal, distal); 3/4 jaw +x/-x arm, 5/6 jaw +y/-y arm
SHAFT_LABELS = (1, 2)
JAW_LABELS = (3, 4, 5, 6)

DEFAULT_LIMITS = (
    (-1.2, 1.2),
    (-1.2, 1.2),
    (0.0, 0.24),
    (-2.2, 2.2),
    (-1.5, 1.5),
    # q4/q5 extraction sensitivity grows as 1/cos(q6); keep clear of the gimbal set
    (-1.0, 1.0),
)


class SingularDirectionWarning(UserWarning):
    """Wrist on the y axis: q1 is undefined and returned as 0."""


@dataclass(frozen=True)
class KinematicParams:
    """Tool geometry in SI units.

    ``shaft_offsets`` are distances from the wrist back along the shaft to the
    proximal and distal shaft spheres. ``pitch_to_yaw``/``yaw_to_tip`` are the
    distal link lengths, ``cross_offset`` places the fiducial cross centre along
    the jaw axis beyond the second wrist axis.
    """

    l1: float = 0.1
    l_tool: float = 0.42
    shaft_offsets: Tuple[float, float] = (0.07, 0.04)
    jaw_cross_arm: float = 0.015
    joint_limits: Tuple[Tuple[float, float], ...] = DEFAULT_LIMITS
    pitch_to_yaw: float = 0.0091
    yaw_to_tip: float = 0.0102
    cross_offset: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "shaft_offsets", tuple(float(v) for v in self.shaft_offsets))
        object.__setattr__(
            self, "joint_limits", tuple((float(lo), float(hi)) for lo, hi in self.joint_limits)
        )
        if not self.l_tool > self.l1 > 0:
            raise ValueError("need l_tool > l1 > 0")
        if len(self.shaft_offsets) != 2 or self.shaft_offsets[0] == self.shaft_offsets[1]:
            raise ValueError("shaft_offsets must be two distinct lengths")
        if len(self.joint_limits) != 6 or any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("joint_limits must be six (min, max) pairs with min < max")
        if self.jaw_cross_arm <= 0:
            raise ValueError("jaw_cross_arm must be positive")

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.joint_limits])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.joint_limits])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shaft_offsets"] = list(self.shaft_offsets)
        d["joint_limits"] = [list(p) for p in self.joint_limits]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KinematicParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class JointConfig:
    """Six joint values (q3 in metres, the rest radians) tagged with a role."""

    q: np.ndarray
    role: str = "commanded"

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        if q.shape != (6,):
            raise ValueError(f"JointConfig needs 6 values, got {q.shape[0]}")
        if not np.all(np.isfinite(q)):
            raise ValueError("JointConfig values must be finite")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def within_limits(self, params: KinematicParams, tol: float = 1e-12) -> bool:
        return bool(np.all(self.q >= params.lower - tol) and np.all(self.q <= params.upper + tol))

    def validate(self, params: KinematicParams) -> "JointConfig":
        if not self.within_limits(params):
            bad = [i + 1 for i in range(6)
                   if not params.lower[i] - 1e-12 <= self.q[i] <= params.upper[i] + 1e-12]
            raise LimitViolationError(f"joints {bad} outside limits: {self.q.tolist()}")
        return self

    def with_role(self, role: str) -> "JointConfig":
        return JointConfig(self.q.copy(), role)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.q, dtype=dtype)


def as_q(q) -> np.ndarray:
    """Plain float array from a JointConfig or any 6-sequence."""
    if isinstance(q, JointConfig):
        return np.array(q.q)
    return np.asarray(q, dtype=float)


@dataclass(frozen=True)
class ToolPose:
    wrist_position: np.ndarray
    jaw_rotation: np.ndarray
    fiducial_centers: Dict[int, np.ndarray] = field(default_factory=dict)
    tip_position: np.ndarray | None = None


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


ZERO_JAW_ROTATION = rot_x(np.pi) @ rot_z(-np.pi / 2)


def _extension(q3: float, params: KinematicParams) -> float:
    ext = params.l_tool - params.l1 + q3
    if ext <= 0:
        raise DegenerateGeometryError(f"l_tool - l1 + q3 = {ext} <= 0")
    return ext


def wrist_position_from_joints(q123: Sequence[float], params: KinematicParams) -> np.ndarray:
    q1, q2, q3 = (float(v) for v in q123[:3])
    ext = _extension(q3, params)
    return np.array([
        np.cos(q2) * np.sin(q1) * ext,
        -np.sin(q2) * ext,
        -np.cos(q1) * np.cos(q2) * ext,
    ])


def wrist_joints_from_position(p: Sequence[float], params: KinematicParams) -> np.ndarray:
    x, y, z = (float(v) for v in p)
    norm = np.sqrt(x * x + y * y + z * z)
    if norm == 0.0:
        raise SingularConfigurationError("wrist position at the RCM")
    if x == 0.0 and z == 0.0:
        warnings.warn("wrist on the y axis; q1 set to 0", SingularDirectionWarning, stacklevel=2)
        q1 = 0.0
    else:
        q1 = np.arctan2(x, -z)
    q2 = np.arctan2(-y, np.sqrt(x * x + z * z))
    return np.array([q1, q2, norm + params.l1 - params.l_tool])


def shaft_rotation(q1: float, q2: float) -> np.ndarray:
    """Orientation of frame 3 (z axis along the shaft, RCM toward wrist)."""
    return rot_y(-q1) @ rot_x(np.pi - q2)


def wrist_rotation(q456: Sequence[float]) -> np.ndarray:
    """Rotation from frame 3 to the fiducial cross frame."""
    q4, q5, q6 = (float(v) for v in q456)
    return rot_z(-q4 - np.pi / 2) @ rot_x(q6) @ rot_y(q5)


def jaw_rotation_from_joints(q, params: KinematicParams | None = None) -> np.ndarray:
    q = as_q(q)
    return shaft_rotation(q[0], q[1]) @ wrist_rotation(q[3:6])


def tool_joints_from_rotation(R_fid, q123: Sequence[float], params: KinematicParams) -> np.ndarray:
    R_fid = np.asarray(R_fid, dtype=float)
    if R_fid.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if np.max(np.abs(R_fid.T @ R_fid - np.eye(3))) > 1e-6:
        raise DegenerateGeometryError("rotation is not orthonormal")
    r = shaft_rotation(float(q123[0]), float(q123[1])).T @ R_fid
    c6 = np.hypot(r[2, 0], r[2, 2])
    if c6 < 1e-9:
        raise SingularConfigurationError("gimbal-degenerate wrist (cos q6 ~ 0)")
    q4 = np.arctan2(-r[1, 1], r[0, 1])
    q5 = np.arctan2(-r[2, 0], r[2, 2])
    q6 = np.arctan2(r[2, 1], c6)
    return np.array([q4, q5, q6])


def _distal_points(q: np.ndarray, params: KinematicParams):
    """Wrist, second wrist axis point and jaw rotation for a joint vector."""
    wrist = wrist_position_from_joints(q[:3], params)
    R03 = shaft_rotation(q[0], q[1])
    R_mid = R03 @ rot_z(-q[3] - np.pi / 2) @ rot_x(q[5])
    R_jaw = R_mid @ rot_y(q[4])
    second_axis = wrist + params.pitch_to_yaw * R_mid[:, 2]
    return wrist, R03, second_axis, R_jaw


def tip_position(q, params: KinematicParams) -> np.ndarray:
    q = as_q(q)
    _, _, second_axis, R_jaw = _distal_points(q, params)
    return second_axis + params.yaw_to_tip * R_jaw[:, 2]


def forward_kinematics(q, params: KinematicParams, check_limits: bool = True) -> ToolPose:
    if check_limits:
        (q if isinstance(q, JointConfig) else JointConfig(as_q(q))).validate(params)
    q = as_q(q)
    wrist, R03, second_axis, R_jaw = _distal_points(q, params)
    shaft_dir = R03[:, 2]
    centre = second_axis + params.cross_offset * R_jaw[:, 2]
    arm = params.jaw_cross_arm
    centers = {
        1: wrist - params.shaft_offsets[0] * shaft_dir,
        2: wrist - params.shaft_offsets[1] * shaft_dir,
        3: centre + arm * R_jaw[:, 0],
        4: centre - arm * R_jaw[:, 0],
        5: centre + arm * R_jaw[:, 1],
        6: centre - arm * R_jaw[:, 1],
    }
    return ToolPose(
        wrist_position=wrist,
        jaw_rotation=R_jaw,
        fiducial_centers=centers,
        tip_position=second_axis + params.yaw_to_tip * R_jaw[:, 2],
    )


def random_configuration(rng: np.random.Generator, params: KinematicParams, margin: float = 0.0) -> np.ndarray:
    lo, hi = params.lower, params.upper
    span = hi - lo
    return rng.uniform(lo + margin * span, hi - margin * span)


def clamp_to_limits(q, params: KinematicParams) -> Tuple[np.ndarray, bool]:
    q = as_q(q)
    clamped = np.clip(q, params.lower, params.upper)
    return clamped, bool(np.any(clamped != q))
