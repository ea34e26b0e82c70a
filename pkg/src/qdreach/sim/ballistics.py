"""Drag-free projectile flight down to the ground plane ``z = 0``."""
from __future__ import annotations

import numpy as np

GRAVITY = 9.81


def flight_time(z0, vz, gravity: float = GRAVITY):
    """Non-negative root of ``z0 + vz t - g t^2 / 2 = 0``; NaN when none exists."""
    z0 = np.asarray(z0, dtype=float)
    vz = np.asarray(vz, dtype=float)
    if gravity <= 0:
        # a rising or hovering ball only comes down when it already sinks
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(vz < 0, -z0 / vz, np.where(z0 == 0, 0.0, np.nan))
        return t
    disc = vz * vz + 2.0 * gravity * z0
    with np.errstate(invalid="ignore"):
        # numerically stable positive root: (vz + sqrt(disc)) / g
        t = (vz + np.sqrt(disc)) / gravity
    t = np.where(disc >= 0, t, np.nan)
    on_plane = (z0 == 0) & (vz <= 0)
    return np.where(on_plane, 0.0, np.where(t >= 0, t, np.nan))


def ballistic_landing(p0, v0, gravity: float = GRAVITY):
    """Touchdown point ``(x, y)`` and flight time, or ``None`` if the ball never lands.

    Works on single vectors; see :func:`flight_time` for the batched root.
    """
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if p0[2] < 0:
        raise ValueError("release point is below the ground plane")
    t = float(flight_time(p0[2], v0[2], gravity))
    if not np.isfinite(t):
        return None
    return p0[:2] + v0[:2] * t, t
