"""Intelligent driver model and its equilibrium (fundamental diagram)."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .params import IdmParams

NO_LEADER_GAP = 1.0e6


@njit(cache=True)
def _pow(r, delta):
    if delta == 4.0:
        r2 = r * r
        return r2 * r2
    return r ** delta


@njit(cache=True)
def idm_accel(v, gap, dv, v0, time_gap, s0, delta, a, b):
    """Raw IDM acceleration; ``dv`` is the closing speed v - v_leader."""
    s_star = s0 + v * time_gap + v * dv / (2.0 * math.sqrt(a * b))
    if s_star < 0.0:
        s_star = 0.0
    if gap < 1e-3:
        gap = 1e-3
    return a * (1.0 - _pow(v / v0, delta) - (s_star / gap) ** 2)


@njit(cache=True)
def equilibrium_gap(v, v0, time_gap, s0, delta):
    return (s0 + v * time_gap) / math.sqrt(1.0 - _pow(v / v0, delta))


@njit(cache=True)
def equilibrium_speed_for_gap(gap, v0, time_gap, s0, delta):
    """Speed at which ``gap`` is the IDM equilibrium gap (0 below the jam gap)."""
    if gap <= s0:
        return 0.0
    lo = 0.0
    hi = v0
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        if equilibrium_gap(mid, v0, time_gap, s0, delta) < gap:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


GAP_TABLE_STEP = 0.05


def gap_speed_table(p: IdmParams, max_gap: float) -> np.ndarray:
    """Equilibrium speed sampled every ``GAP_TABLE_STEP`` metres of gap, 0..max_gap."""
    gaps = np.arange(0.0, max_gap + 2 * GAP_TABLE_STEP, GAP_TABLE_STEP)
    return np.array([equilibrium_speed_for_gap(g, p.desired_speed, p.time_gap, p.min_gap, p.accel_exponent)
                     for g in gaps])


@njit(cache=True)
def table_speed_for_gap(gap, table):
    u = gap / GAP_TABLE_STEP
    if u <= 0.0:
        return table[0]
    i = int(u)
    if i >= table.shape[0] - 1:
        return table[table.shape[0] - 1]
    w = u - i
    return table[i] * (1.0 - w) + table[i + 1] * w


def idm_acceleration(v: float, gap: float, dv: float, p: IdmParams, eff_T: float | None = None) -> float:
    """IDM acceleration for a follower at speed ``v`` behind a leader ``gap`` metres ahead.

    Args:
        v: follower speed (m/s).
        gap: bumper-to-bumper gap (m); pass ``NO_LEADER_GAP`` on an empty road.
        dv: closing speed v - v_leader (m/s).
        p: IDM parameters.
        eff_T: effective time gap, defaults to ``p.time_gap``.

    Returns:
        Acceleration in m/s^2. Never exceeds ``p.max_accel``.
    """
    eff_T = p.time_gap if eff_T is None else eff_T
    for name, val in (("v", v), ("gap", gap), ("dv", dv), ("eff_T", eff_T)):
        if not math.isfinite(val):
            raise ValueError(f"idm_acceleration: non-finite {name}={val}")
    if gap <= 0:
        raise ValueError(f"idm_acceleration: gap must be positive, got {gap}")
    return float(idm_accel(v, gap, dv, p.desired_speed, eff_T, p.min_gap, p.accel_exponent,
                           p.max_accel, p.comfort_decel))


def equilibrium_state(v: float, p: IdmParams = IdmParams()) -> tuple[float, float]:
    """Density (veh/m) and flow (veh/h) of homogeneous IDM traffic moving at ``v``."""
    if not (math.isfinite(v) and v >= 0):
        raise ValueError(f"equilibrium_state: speed must be a finite non-negative number, got {v}")
    if v >= p.desired_speed:
        raise ValueError(
            f"equilibrium_state: v={v} reaches the free-flow limit v0={p.desired_speed}; "
            "the equilibrium gap diverges")
    gap = equilibrium_gap(v, p.desired_speed, p.time_gap, p.min_gap, p.accel_exponent)
    rho = 1.0 / (gap + p.vehicle_length)
    return rho, 3600.0 * rho * v


def equilibrium_speed(rho, p: IdmParams = IdmParams(), n_table: int = 4001):
    """Equilibrium speed V_e(rho) on [0, jam density]; vectorised through a dense table."""
    table_v, table_rho = _fd_table(p, n_table)
    rho = np.asarray(rho, dtype=float)
    # table_rho is decreasing in v
    return np.interp(rho, table_rho[::-1], table_v[::-1], left=p.desired_speed, right=0.0)


def jam_density(p: IdmParams = IdmParams()) -> float:
    return 1.0 / (p.min_gap + p.vehicle_length)


_FD_CACHE: dict = {}


def _fd_table(p: IdmParams, n: int):
    key = (p, n)
    if key not in _FD_CACHE:
        # cluster nodes near v0 where the density goes to zero
        u = np.linspace(0.0, 1.0, n)
        v = p.desired_speed * (1.0 - (1.0 - u) ** 3)
        v[-1] = p.desired_speed
        rho = np.empty(n)
        for k, vk in enumerate(v[:-1]):
            rho[k] = 1.0 / (equilibrium_gap(vk, p.desired_speed, p.time_gap, p.min_gap,
                                            p.accel_exponent) + p.vehicle_length)
        rho[-1] = 0.0
        _FD_CACHE[key] = (v, rho)
    return _FD_CACHE[key]
