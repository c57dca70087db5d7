"""Two-intent lane-change model (keep right / speed gain) and the gap-acceptance check.

The scalar kernels are numba-compiled so the simulator core uses exactly the
same decision logic as the Python-facing helpers below.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from functools import lru_cache

from .idm import gap_speed_table, idm_accel, table_speed_for_gap
from .params import IdmParams, LaneChangeParams

# intent codes
NO_INTENT = 0
LEFT_SPEED_GAIN = 1
RIGHT_SPEED_GAIN = 2
RIGHT_KEEP_RIGHT = 3

INTENT_LABELS = {
    LEFT_SPEED_GAIN: ("left", "speed_gain"),
    RIGHT_SPEED_GAIN: ("right", "speed_gain"),
    RIGHT_KEEP_RIGHT: ("right", "keep_right"),
}


@njit(cache=True)
def anticipated_speed(has_leader, gap, v_leader, lookahead, v0, ve_table):
    """Speed a driver expects to sustain behind the given leader.

    ``ve_table`` samples the equilibrium speed as a function of gap (see ``gap_speed_table``).
    """
    if not has_leader or gap > lookahead:
        return v0
    return min(table_speed_for_gap(gap, ve_table), v_leader)


@njit(cache=True)
def choose_intent(has_left, has_right, ant_cur, ant_left, ant_right, keep_right_eps, gain_left, gain_right):
    if has_left and ant_left - ant_cur > gain_left:
        return LEFT_SPEED_GAIN
    if has_right:
        if ant_right - ant_cur > gain_right:
            return RIGHT_SPEED_GAIN
        if ant_right >= ant_cur - keep_right_eps:
            return RIGHT_KEEP_RIGHT
    return NO_INTENT


@njit(cache=True)
def gap_acceptable(x, v, has_leader, x_lead, has_follower, x_fol, v_fol, T_fol,
                   vlen, v0, s0, delta, a, b, b_safe):
    if has_leader and x_lead - x - vlen < s0:
        return False
    if has_follower:
        gap_f = x - x_fol - vlen
        if gap_f <= 0.0:
            return False
        if idm_accel(v_fol, gap_f, v_fol - v, v0, T_fol, s0, delta, a, b) < -b_safe:
            return False
    return True


@dataclass
class Neighbor:
    x: float
    v: float
    time_gap: Optional[float] = None


@dataclass
class Neighbors:
    """Leaders (and followers) around a vehicle; ``None`` where a lane is free."""

    leader: Optional[Neighbor] = None
    left_leader: Optional[Neighbor] = None
    right_leader: Optional[Neighbor] = None
    left_follower: Optional[Neighbor] = None
    right_follower: Optional[Neighbor] = None


@lru_cache(maxsize=16)
def speed_table(p: IdmParams, lookahead: float) -> np.ndarray:
    return gap_speed_table(p, lookahead)


def _ant(nb: Optional[Neighbor], x: float, p: IdmParams, lcp: LaneChangeParams) -> float:
    if nb is None:
        return p.desired_speed
    gap = nb.x - x - p.vehicle_length
    return anticipated_speed(True, gap, nb.v, lcp.lookahead, p.desired_speed, speed_table(p, lcp.lookahead))


def lane_change_intent(veh, neighbors: Neighbors, n_lanes: int,
                       lcp: LaneChangeParams = LaneChangeParams()) -> Optional[tuple[str, str]]:
    """Instantaneous lane-change desire of ``veh`` (lanes 1..n_lanes, 1 = rightmost).

    Returns:
        ``(direction, reason)`` or ``None``.
    """
    p = veh.idm
    has_left = veh.lane < n_lanes
    has_right = veh.lane > 1
    cur = _ant(neighbors.leader, veh.x, p, lcp)
    left = _ant(neighbors.left_leader, veh.x, p, lcp) if has_left else 0.0
    right = _ant(neighbors.right_leader, veh.x, p, lcp) if has_right else 0.0
    code = choose_intent(has_left, has_right, cur, left, right, lcp.keep_right_eps, lcp.gain_left,
                         lcp.gain_right)
    return INTENT_LABELS.get(code)


def safety_check(veh, leader: Optional[Neighbor], follower: Optional[Neighbor],
                 lcp: LaneChangeParams = LaneChangeParams()) -> bool:
    """Gap acceptance against the prospective leader and follower in the target lane."""
    p = veh.idm
    t_fol = p.time_gap
    if follower is not None and follower.time_gap is not None:
        t_fol = follower.time_gap
    return bool(gap_acceptable(
        veh.x, veh.v,
        leader is not None, leader.x if leader else 0.0,
        follower is not None, follower.x if follower else 0.0, follower.v if follower else 0.0, t_fol,
        p.vehicle_length, p.desired_speed, p.min_gap, p.accel_exponent, p.max_accel, p.comfort_decel,
        lcp.b_safe))
