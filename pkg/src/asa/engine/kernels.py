"""Missile fly-out integration kernels.

The WEZ estimator and its brute-force verification sweeps integrate the
same pursuit fly-out thousands of times, which makes this the hot numeric
loop of the whole package. The kernel compiles with numba when available;
set ASA_NUMBA=0 to force the pure-Python path (used as the independent
route in tests and as the fallback when numba is not installed). Both
paths run the identical source.

Geometry: shooter at the origin, target starting at (r0, 0) so the line of
sight is +x; aspect is the target heading relative to that line of sight
(0 = tail-chase, pi = head-on). The missile launches from the origin
already pointed at the target and pursues with a turn-rate limit.

benchmarks/benchmark_wez.py compares the compiled and fallback paths.
"""

from __future__ import annotations

import math
import os


def _flyout_time(
    r0: float,
    target_speed: float,
    aspect: float,
    missile_speed: float,
    turn_rate: float,
    hit_radius: float,
    max_flight_s: float,
    dt: float,
) -> float:
    """Seconds until intercept, or -1.0 for a miss (timeout).

    Per step: target flies straight, missile turns toward the target's new
    position (at most turn_rate*dt) and advances missile_speed*dt. Hit when
    separation drops below hit_radius.
    """
    mx = 0.0
    my = 0.0
    mh = 0.0
    tx = r0
    ty = 0.0
    tvx = target_speed * math.cos(aspect)
    tvy = target_speed * math.sin(aspect)
    if math.hypot(tx - mx, ty - my) < hit_radius:
        return 0.0
    max_turn = turn_rate * dt
    two_pi = 2.0 * math.pi
    # integer step count: float accumulation must not add a phantom step
    n_steps = int(max_flight_s / dt + 1e-9)
    for k in range(1, n_steps + 1):
        tx += tvx * dt
        ty += tvy * dt
        bearing = math.atan2(ty - my, tx - mx)
        delta = (bearing - mh + math.pi) % two_pi - math.pi
        if delta > max_turn:
            delta = max_turn
        elif delta < -max_turn:
            delta = -max_turn
        mh += delta
        mx += missile_speed * dt * math.cos(mh)
        my += missile_speed * dt * math.sin(mh)
        if math.hypot(tx - mx, ty - my) < hit_radius:
            return k * dt
    return -1.0


# Always-interpreted alias: the independent route for kernel equivalence tests.
flyout_time_py = _flyout_time

NUMBA_ENABLED = False
if os.environ.get("ASA_NUMBA", "1") != "0":
    try:
        from numba import njit

        flyout_time = njit(cache=True)(_flyout_time)
        NUMBA_ENABLED = True
    except ImportError:
        flyout_time = _flyout_time
else:
    flyout_time = _flyout_time
