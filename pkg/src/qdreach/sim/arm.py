"""Serial-chain arm geometry: forward kinematics and gripper velocity."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trajectory import CubicTrajectory

FD_STEP = 1e-4


@dataclass(frozen=True)
class ArmModel:
    """Revolute chain rooted at ``(0, 0, base_height)``.

    Joint ``j`` rotates about the vertical axis when ``axes[j] == "z"`` and
    about the horizontal ``y`` axis when ``axes[j] == "y"``; link ``j`` then
    extends along the rotated local ``x`` axis.
    """

    joint_count: int = 4
    link_lengths: tuple[float, ...] = (0.3, 0.3, 0.3, 0.3)
    base_height: float = 1.0
    home: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    position_limit: float = np.pi / 2
    velocity_limit: float = 3.0
    axes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.joint_count < 2:
            raise ValueError("arm needs at least two joints")
        if not self.axes:
            object.__setattr__(
                self, "axes", tuple("z" if j % 2 == 0 else "y" for j in range(self.joint_count))
            )
        if len(self.link_lengths) != self.joint_count or len(self.home) != self.joint_count:
            raise ValueError("link_lengths and home must have one entry per joint")
        if len(self.axes) != self.joint_count or set(self.axes) - {"y", "z"}:
            raise ValueError("axes must be 'y' or 'z', one per joint")
        if min(self.link_lengths) <= 0:
            raise ValueError("link lengths must be positive")
        if self.position_limit <= 0 or self.velocity_limit <= 0:
            raise ValueError("joint limits must be positive")

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    @classmethod
    def uniform(cls, joint_count: int = 4, link_length: float = 0.3, **kw) -> "ArmModel":
        return cls(
            joint_count=joint_count,
            link_lengths=(link_length,) * joint_count,
            home=(0.0,) * joint_count,
            **kw,
        )


def forward_kinematics(arm: ArmModel, q) -> np.ndarray:
    """Gripper position for joint vector(s) ``q`` of shape ``(..., J)``."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != arm.joint_count:
        raise ValueError(f"expected {arm.joint_count} joint values, got {q.shape[-1]}")
    lead = q.shape[:-1]
    # columns of the running rotation matrix, post-multiplied joint by joint
    cx = np.broadcast_to(np.array([1.0, 0.0, 0.0]), lead + (3,))
    cy = np.broadcast_to(np.array([0.0, 1.0, 0.0]), lead + (3,))
    cz = np.broadcast_to(np.array([0.0, 0.0, 1.0]), lead + (3,))
    p = np.zeros(lead + (3,))
    p[..., 2] = arm.base_height
    for j, (axis, length) in enumerate(zip(arm.axes, arm.link_lengths)):
        c = np.cos(q[..., j])[..., None]
        s = np.sin(q[..., j])[..., None]
        if axis == "z":
            cx, cy = c * cx + s * cy, c * cy - s * cx
        else:
            cx, cz = c * cx - s * cz, s * cx + c * cz
        p = p + length * cx
    return p


def gripper_velocity(arm: ArmModel, traj: CubicTrajectory, t, offsets=None, clip_to_horizon=True):
    """Cartesian gripper velocity by finite differences of forward kinematics.

    Central differences with step ``FD_STEP``; when ``clip_to_horizon`` is set
    the stencil turns one-sided within half a step of ``0`` or ``T``.
    ``offsets`` are added to every joint angle before the kinematics.
    """
    t = np.asarray(t, dtype=float)
    h = FD_STEP / 2.0
    lo = t - h
    hi = t + h
    if clip_to_horizon:
        # slide the stencil back inside [0, T], giving one-sided differences
        up = np.clip(-lo, 0.0, None)
        down = np.clip(hi - traj.T, 0.0, None)
        lo = lo + up - down
        hi = hi + up - down
    off = 0.0 if offsets is None else np.asarray(offsets, dtype=float)
    p_hi = forward_kinematics(arm, traj.position(hi) + off)
    p_lo = forward_kinematics(arm, traj.position(lo) + off)
    return (p_hi - p_lo) / (hi - lo)[..., None]
