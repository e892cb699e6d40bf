"""Human car-following dynamics for all uncontrolled vehicles.

Follow-the-leader plus optimal-velocity relaxation:

    dv/dt = a_ftl * (v_lead - v) / s^2 + b_ov * (V(s) - v)

where s is the front-to-front spacing and V is a saturating tanh profile
of the preferred speed.  With the unstable-ring calibration the uniform
state on a 260 m / 22-vehicle ring is linearly unstable, so stop-and-go
waves grow from tiny perturbations; that property is asserted by test,
not assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class CollisionError(Exception):
    """Raised when two vehicles come into contact."""

    def __init__(self, message: str, follower=None, leader=None, t=None,
                 tail=None):
        super().__init__(message)
        self.follower = follower
        self.leader = leader
        self.t = t
        self.tail = tail  # recent trajectory rows for diagnostics


_TANH2 = math.tanh(2.0)


@dataclass
class HumanDriverParams:
    """Calibration of the follow-the-leader / optimal-velocity model."""

    a_ftl: float = 20.0   # follow-the-leader gain, m^2/s
    b_ov: float = 0.5     # optimal-velocity relaxation gain, 1/s
    v_max: float = 9.75   # saturation speed of V, m/s
    d0: float = 2.5       # transition scale of V, m
    l_veh: float = 4.5    # effective vehicle length, m

    @classmethod
    def unstable_ring(cls) -> "HumanDriverParams":
        """Preset whose uniform flow on the 260 m ring is string-unstable."""
        return cls(a_ftl=20.0, b_ov=0.5, v_max=9.75, d0=2.5, l_veh=4.5)

    @classmethod
    def open_road(cls) -> "HumanDriverParams":
        """Highway preset: stable at cruise, wave-amplifying in congestion."""
        return cls(a_ftl=20.0, b_ov=0.5, v_max=30.0, d0=20.0, l_veh=4.5)

    def validate(self) -> None:
        for name in ("a_ftl", "b_ov", "v_max", "d0", "l_veh"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


def optimal_velocity(s: float, params: HumanDriverParams) -> float:
    """Preferred speed at spacing s (front-to-front), floored at 0.

    v_max * [tanh((s - l_veh)/d0 - 2) + tanh 2] / (1 + tanh 2): zero at
    contact spacing l_veh, saturating toward v_max for large s.
    """
    value = params.v_max * (
        math.tanh((s - params.l_veh) / params.d0 - 2.0) + _TANH2) / (1.0 + _TANH2)
    return max(0.0, value)


def optimal_velocity_slope(s: float, params: HumanDriverParams) -> float:
    """dV/ds; used by the linear-stability helpers and tests."""
    x = (s - params.l_veh) / params.d0 - 2.0
    if optimal_velocity(s, params) <= 0.0:
        return 0.0
    return params.v_max * (1.0 - math.tanh(x) ** 2) / (params.d0 * (1.0 + _TANH2))


def equilibrium_spacing(v: float, params: HumanDriverParams) -> float:
    """Spacing at which V(s) = v (inverse of the tanh profile)."""
    if not 0.0 < v < params.v_max:
        raise ValueError(f"speed must lie in (0, v_max), got {v}")
    ratio = v / params.v_max * (1.0 + _TANH2) - _TANH2
    return params.l_veh + params.d0 * (math.atanh(ratio) + 2.0)


def human_accel(gap: float, v: float, v_lead: float,
                params: HumanDriverParams) -> float:
    """Acceleration of a human driver given spacing and the two speeds.

    ``gap`` is the front-to-front spacing to the leader.  Non-positive
    spacing means the vehicles overlap and raises CollisionError.
    """
    if gap <= 0.0:
        raise CollisionError(f"non-positive spacing {gap:.3f} m")
    return (params.a_ftl * (v_lead - v) / (gap * gap)
            + params.b_ov * (optimal_velocity(gap, params) - v))


def string_unstable(spacing: float, params: HumanDriverParams) -> bool:
    """Long-wave linear instability of uniform flow at the given spacing.

    The uniform state is unstable when V'(s) exceeds a_ftl/s^2 + b_ov/2.
    """
    return optimal_velocity_slope(spacing, params) > (
        params.a_ftl / spacing ** 2 + params.b_ov / 2.0)
