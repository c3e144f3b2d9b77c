"""Maximum-launch-range estimation by fly-out bisection.

For a given target speed and aspect, the largest launch range from which a
single deterministic missile fly-out still intercepts. Bisection over
[0, 2*launch_range_m] to a configurable resolution, relying on hit/miss
monotonicity in range (closing geometry plus a flight-time ceiling).
"""

from __future__ import annotations

from typing import Mapping

from .kernels import flyout_time

DEFAULT_RESOLUTION_M = 10.0


class NoHitAtAnyRange(Exception):
    """Even a point-blank shot misses with these weapon parameters."""


def flyout_hits(range_m: float, target_speed: float, aspect: float, weapon: Mapping, dt: float = 0.1) -> bool:
    """One deterministic fly-out: does a shot from this range intercept?"""
    return (
        flyout_time(
            float(range_m),
            float(target_speed),
            float(aspect),
            float(weapon["missile_speed_mps"]),
            float(weapon["missile_turn_rate_rad_s"]),
            float(weapon["hit_radius_m"]),
            float(weapon["max_flight_s"]),
            float(dt),
        )
        >= 0.0
    )


def estimate_wez_max_range(
    target_speed: float,
    aspect: float,
    weapon: Mapping,
    dt: float = 0.1,
    resolution_m: float = DEFAULT_RESOLUTION_M,
) -> float:
    """Largest launch range that still hits, to within ``resolution_m``.

    ``weapon`` carries the wez_weapon parameter keys (launch_range_m,
    missile_speed_mps, missile_turn_rate_rad_s, hit_radius_m, max_flight_s).
    Raises NoHitAtAnyRange when even range zero misses.
    """
    if not flyout_hits(0.0, target_speed, aspect, weapon, dt):
        raise NoHitAtAnyRange(f"no intercept at range 0 (target_speed={target_speed}, aspect={aspect})")
    hi = 2.0 * float(weapon["launch_range_m"])
    if hi <= 0.0:
        return 0.0
    if flyout_hits(hi, target_speed, aspect, weapon, dt):
        return hi
    lo = 0.0
    while hi - lo > resolution_m:
        mid = 0.5 * (lo + hi)
        if flyout_hits(mid, target_speed, aspect, weapon, dt):
            lo = mid
        else:
            hi = mid
    return lo
