"""Cubic joint-space trajectories (rest or moving start, arbitrary end state)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def cubic_coefficients(q0, v0, qf, vf, T):
    """Return ``(a0, a1, a2, a3)`` of the cubic matching both boundary states.

    All arguments broadcast against each other, so whole batches of joints and
    genotypes can be fitted in one call.
    """
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("trajectory duration must be positive")
    q0 = np.asarray(q0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    qf = np.asarray(qf, dtype=float)
    vf = np.asarray(vf, dtype=float)
    delta = qf - q0
    a0 = q0 + 0.0 * delta
    a1 = v0 + 0.0 * delta
    a2 = (3.0 * delta - (2.0 * v0 + vf) * T) / T**2
    a3 = (-2.0 * delta + (v0 + vf) * T) / T**3
    return a0, a1, a2, a3


@dataclass(frozen=True)
class CubicTrajectory:
    """Per-joint cubic ``q(t) = a0 + a1 t + a2 t^2 + a3 t^3`` over ``[0, T]``.

    Coefficient arrays share a shape ``(..., J)``; batched durations carry a
    trailing unit axis, ``(..., 1)``, so they broadcast against both the
    coefficients and sample-time grids. Evaluating outside ``[0, T]`` extrapolates the same
    polynomial.
    """

    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    T: np.ndarray

    @classmethod
    def fit(cls, q0, v0, qf, vf, T) -> "CubicTrajectory":
        a0, a1, a2, a3 = cubic_coefficients(q0, v0, qf, vf, T)
        return cls(a0, a1, a2, a3, np.asarray(T, dtype=float))

    @property
    def coefficients(self):
        return self.a0, self.a1, self.a2, self.a3

    def _coeffs_for(self, t):
        # times (..., S) against coefficients (..., J) give values (..., S, J)
        t = np.asarray(t, dtype=float)
        if t.ndim == 0 or np.ndim(self.a0) == 0:
            # scalar time, or a single scalar joint sampled on a grid
            return self.coefficients, t
        return [c[..., None, :] for c in self.coefficients], t[..., None]

    def position(self, t):
        (a0, a1, a2, a3), t = self._coeffs_for(t)
        return a0 + t * (a1 + t * (a2 + t * a3))

    def velocity(self, t):
        (_, a1, a2, a3), t = self._coeffs_for(t)
        return a1 + t * (2.0 * a2 + 3.0 * t * a3)

    def acceleration(self, t):
        (_, _, a2, a3), t = self._coeffs_for(t)
        return 2.0 * a2 + 6.0 * t * a3

    def position_extrema(self):
        """Positions at interior stationary points, NaN where none exists.

        Returns an array of shape ``(..., 2, J)`` holding the cubic's value at
        both roots of ``q'(t)`` when they fall strictly inside ``(0, T)``.
        """
        a0, a1, a2, a3 = self.coefficients
        T = self.T
        A = 3.0 * a3
        B = 2.0 * a2
        C = a1
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = B * B - 4.0 * A * C
            sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
            quad = np.abs(A) > 1e-14
            r1 = np.where(quad, (-B + sq) / (2.0 * A), np.where(np.abs(B) > 1e-14, -C / B, np.nan))
            r2 = np.where(quad, (-B - sq) / (2.0 * A), np.nan)
        out = []
        for r in (r1, r2):
            inside = (r > 0) & (r < T)
            val = a0 + r * (a1 + r * (a2 + r * a3))
            out.append(np.where(inside, val, np.nan))
        return np.stack(out, axis=-2)
