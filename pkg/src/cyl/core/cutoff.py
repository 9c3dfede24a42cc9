"""Radial cutoff profiles: identically 1 inside, 0 outside, C^2 in between."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PreconditionError

PROFILE = "quintic_smoothstep"  # 6t^5 - 15t^4 + 10t^3 in t = (r_out - r)/(r_out - r_in)


@dataclass(frozen=True)
class Cutoff:
    r_in: float
    r_out: float
    profile: str = PROFILE

    def __post_init__(self):
        if not (0 < self.r_in < self.r_out):
            raise PreconditionError("need 0 < r_in < r_out")
        if self.profile != PROFILE:
            raise PreconditionError(f"unknown profile {self.profile!r}")

    @property
    def width(self) -> float:
        return self.r_out - self.r_in


def cutoff_eval(c: Cutoff, radius):
    """Value and exact first/second radial derivatives of the profile.

    Vectorized over radius; values lie in [0, 1], plateaus are exact.
    """
    r = np.asarray(radius, dtype=float)
    if np.any(r < 0):
        raise PreconditionError("radius >= 0 required")
    w = c.width
    t = np.clip((c.r_out - r) / w, 0.0, 1.0)
    inside = r <= c.r_in
    outside = r >= c.r_out
    s = 6 * t**5 - 15 * t**4 + 10 * t**3
    ds = 30 * t**2 * (t - 1.0) ** 2          # dS/dt
    d2s = 60 * t * (2 * t - 1.0) * (t - 1.0)  # d2S/dt2
    val = np.where(inside, 1.0, np.where(outside, 0.0, s))
    der = np.where(inside | outside, 0.0, -ds / w)
    der2 = np.where(inside | outside, 0.0, d2s / (w * w))
    if np.isscalar(radius):
        return float(val), float(der), float(der2)
    return val, der, der2
